import json

import numpy as np
import pytest

from dyadiclab import ProbeReport, build_grid, emit_report, run_lemma, space_norm, synthesize
from dyadiclab.errors import ReportError
from dyadiclab.grid import ParabolaSlab
from dyadiclab.norms import SpaceSpec
from dyadiclab.reports import HEADERS, SCHEMA_VERSION, result_kind, to_csv, to_json
from dyadiclab.solver import LipschitzTable, PeriodicBox, PicardResult, splitstep_solve


@pytest.fixture(scope="module")
def fit():
    return run_lemma("INV_MOD", build_grid(32, 512, 8.0, 68.0))


def probe_report():
    rep = ProbeReport()
    for fam in ("random_dyadic", "time_axis_output"):
        for s in (-0.75, -0.5):
            for j in (2, 3, 4):
                rep.rows.append({"family": fam, "s": s, "j": j, "ratio": 2.0 ** (0.1 * j)})
            rep.slopes[(fam, s)] = 0.1
    return rep


def test_slopefit_csv_columns(fit, tmp_path):
    (p,) = emit_report(fit, "csv", tmp_path, name="fits")
    head = p.read_text().splitlines()[0]
    assert head == "lemma,index,predicted,fitted,residual,n_samples"


def test_slopefit_json_schema(fit, tmp_path):
    (p,) = emit_report([fit], "json", tmp_path)
    doc = json.loads(p.read_text())
    assert doc["schema"] == "slopefit" and doc["version"] == SCHEMA_VERSION
    assert doc["data"][0]["lemma"] == "INV_MOD"


def test_slopefit_plotdata(fit, tmp_path):
    paths = emit_report(fit, "plotdata", tmp_path, name="inv")
    assert sorted(p.name for p in paths) == ["inv_INV_MOD_d.dat", "inv_INV_MOD_k.dat"]
    rows = paths[0].read_text().splitlines()
    assert rows[0].startswith("#")
    assert all(len(r.split()) == 2 for r in rows[1:])


def test_probe_plotdata_per_family_and_s(tmp_path):
    paths = emit_report(probe_report(), "plotdata", tmp_path)
    assert len(paths) == 4
    assert {p.name for p in paths} == {"random_dyadic_s-0.75.dat", "random_dyadic_s-0.50.dat",
                                        "time_axis_output_s-0.75.dat", "time_axis_output_s-0.50.dat"}
    data = np.loadtxt(paths[0])
    assert data.shape == (3, 2)


def test_probe_csv():
    text = to_csv(probe_report())
    assert text.splitlines()[0] == ",".join(HEADERS["probe"])


@pytest.mark.parametrize("kind", sorted(HEADERS))
def test_empty_results_header_only(kind, tmp_path):
    (p,) = emit_report([], "csv", tmp_path, name=kind, kind=kind)
    assert p.read_text() == ",".join(HEADERS[kind]) + "\n"
    (q,) = emit_report([], "json", tmp_path, name=kind, kind=kind)
    assert json.loads(q.read_text()) == {"schema": kind, "version": SCHEMA_VERSION, "data": []}
    assert emit_report([], "plotdata", tmp_path, kind=kind) == []


def test_norm_breakdown_report(tmp_path):
    g = build_grid(32, 256, 8.0, 68.0)
    nb = space_norm(synthesize(g, ParabolaSlab(2, 0)), SpaceSpec("Zs_surrogate", -0.75))
    assert result_kind(nb) == "norm"
    rows = to_csv(nb).splitlines()
    assert rows[0] == "kind,s,b,j,value"
    assert rows[1].split(",")[3] == "total"


def test_solver_reports(tmp_path):
    tr = splitstep_solve(np.full((8, 8), 0.1 + 0j), 0.2, 0.1)
    assert to_csv(tr, s=-0.5).splitlines()[0] == "t,l2,hs,s"
    pic = PicardResult(-0.75, [1.0, 1.1], [1.0, 0.1], [0.1])
    assert result_kind(pic) == "picard"
    doc = json.loads(to_json(pic))
    assert doc["data"]["contraction"] is None  # no factor after the first
    lip = LipschitzTable(-0.5, [1e-2, 5e-3, 2.5e-3], [1e-2, 5e-3, 2.5e-3])
    paths = emit_report(lip, "plotdata", tmp_path)
    assert np.loadtxt(paths[0]).shape == (3, 3)


def test_nan_becomes_null():
    pic = PicardResult(-0.75, [1.0], [float("nan")], [])
    assert json.loads(to_json(pic))["data"]["diff_norms"] == [None]


def test_unknown_result_type():
    with pytest.raises(TypeError):
        to_csv({"a": 1})


def test_unknown_format(fit, tmp_path):
    with pytest.raises(ValueError):
        emit_report(fit, "xlsx", tmp_path)


def test_unwritable_destination(fit, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportError):
        emit_report(fit, "csv", blocker)
    with pytest.raises(ReportError):
        emit_report(fit, "csv", blocker / "sub")
    with pytest.raises(ReportError):
        emit_report(probe_report(), "plotdata", blocker / "sub")
