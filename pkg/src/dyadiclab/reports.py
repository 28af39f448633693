"""Report emission for the result types of every module.

Formats
-------
csv       one table with a fixed header per result kind
json      ``{"schema": <kind>, "version": 1, "data": ...}``, keys sorted
plotdata  whitespace-separated columns, ``#`` header line, one file per series

Empty results produce a header-only CSV, ``{"data": []}`` JSON and no
plotdata files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .errors import ReportError
from .lemmas import CSV_COLUMNS, SlopeFit, fits_to_csv
from .norms import NormBreakdown
from .probes import PropositionTable, ProbeReport, proposition_csv
from .solver import LipschitzTable, PicardResult, Trajectory

__all__ = ["FORMATS", "HEADERS", "SCHEMA_VERSION", "result_kind", "to_csv", "to_json", "emit_report"]

FORMATS = ("csv", "json", "plotdata")
SCHEMA_VERSION = 1

HEADERS = {
    "slopefit": list(CSV_COLUMNS),
    "probe": ["family", "s", "j", "ratio", "slope"],
    "proposition": ["estimate", "s", "j", "ratio", "numerator", "denominator", "slope"],
    "picard": ["iter", "norm", "diff_norm", "factor"],
    "lipschitz": ["size", "distance", "ratio", "s"],
    "trajectory": ["t", "l2", "hs", "s"],
    "norm": ["kind", "s", "b", "j", "value"],
}


def result_kind(results) -> str:
    if isinstance(results, SlopeFit):
        return "slopefit"
    if isinstance(results, (list, tuple)) and results and all(isinstance(r, SlopeFit) for r in results):
        return "slopefit"
    if isinstance(results, ProbeReport):
        return "probe"
    if isinstance(results, dict) and results and all(isinstance(v, PropositionTable) for v in results.values()):
        return "proposition"
    if isinstance(results, PicardResult):
        return "picard"
    if isinstance(results, LipschitzTable):
        return "lipschitz"
    if isinstance(results, Trajectory):
        return "trajectory"
    if isinstance(results, NormBreakdown):
        return "norm"
    raise TypeError(f"no report format for {type(results).__name__}")


def _empty(results) -> bool:
    return results is None or (isinstance(results, (list, tuple, dict)) and len(results) == 0)


def _header_only(kind: str) -> str:
    return ",".join(HEADERS[kind]) + "\n"


def _norm_csv(nb: NormBreakdown) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADERS["norm"])
    w.writerow([nb.kind, f"{nb.s:g}", f"{nb.b:g}", "total", f"{nb.total:.12e}"])
    for j, v in nb.per_shell:
        w.writerow([nb.kind, f"{nb.s:g}", f"{nb.b:g}", j, f"{v:.12e}"])
    return buf.getvalue()


def to_csv(results, kind: str | None = None, *, s: float = 0.0) -> str:
    if _empty(results):
        return _header_only(kind or "slopefit")
    kind = kind or result_kind(results)
    if kind == "slopefit":
        fits = [results] if isinstance(results, SlopeFit) else list(results)
        return fits_to_csv(fits)
    if kind == "probe":
        return results.to_csv()
    if kind == "proposition":
        return proposition_csv(results)
    if kind == "trajectory":
        return results.to_csv(s)
    if kind == "norm":
        return _norm_csv(results)
    return results.to_csv()


def _clean(x):
    """JSON-safe copy: NaN and infinities become null."""
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        return _clean(x.item())
    return x


def _data(results, kind: str, s: float):
    if kind == "slopefit":
        fits = [results] if isinstance(results, SlopeFit) else list(results)
        return [f.to_dict() for f in fits]
    if kind == "probe":
        return results.to_dict()
    if kind == "proposition":
        return [t.to_dict() for t in results.values()]
    if kind == "picard":
        return {"s": results.s, "norms": results.norms, "diff_norms": results.diff_norms,
                "factors": results.factors, "cropped": results.cropped,
                "contraction": results.contraction}
    if kind == "lipschitz":
        return {"s": results.s, "sizes": results.sizes, "distances": results.distances,
                "ratios": results.ratios}
    if kind == "trajectory":
        return {"s": s, "times": list(results.times), "l2": list(results.norms(0.0)),
                "hs": list(results.norms(s))}
    return results.to_dict()


def to_json(results, kind: str | None = None, *, s: float = 0.0) -> str:
    if _empty(results):
        doc = {"schema": kind or "slopefit", "version": SCHEMA_VERSION, "data": []}
    else:
        kind = kind or result_kind(results)
        doc = {"schema": kind, "version": SCHEMA_VERSION, "data": _data(results, kind, s)}
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def _series(results, kind: str, s: float) -> dict:
    """name -> (header, rows) for plotdata."""
    out = {}
    if kind == "slopefit":
        fits = [results] if isinstance(results, SlopeFit) else list(results)
        for f in fits:
            labels = list(dict.fromkeys(p.sweep for p in f.samples))
            for lab in labels:
                rows = [(p.extra.get("x", n), p.value) for n, p in enumerate(f.samples)
                        if p.sweep == lab and math.isfinite(p.value)]
                out[f"{f.lemma}_{lab}"] = ("regressor log2_ratio", rows)
    elif kind == "proposition":
        for (e, s_), t in results.items():
            out[f"{e}_s{s_:+.2f}"] = ("j log2_ratio", [(r["j"], math.log2(r["ratio"])) for r in t.rows])
    elif kind == "picard":
        out["picard"] = ("iter diff_norm factor",
                         [(n + 1, d, results.factors[n - 1] if n else float("nan"))
                          for n, d in enumerate(results.diff_norms)])
    elif kind == "lipschitz":
        out["lipschitz"] = ("size distance ratio", list(zip(results.sizes, results.distances, results.ratios)))
    elif kind == "trajectory":
        out["trajectory"] = ("t l2 hs", list(zip(results.times, results.norms(0.0), results.norms(s))))
    elif kind == "norm":
        out["norm"] = ("j value", list(results.per_shell))
    return out


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


def emit_report(results, fmt: str, destination, *, name: str = "report", kind: str | None = None,
                s: float = 0.0) -> list:
    """Write ``results`` in format ``fmt`` under directory ``destination``.

    Returns the written paths.  ``kind`` names the result kind when
    ``results`` is empty; ``s`` is the regularity used for trajectory norms.
    """
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    d = Path(destination)
    if d.exists() and not d.is_dir():
        raise ReportError(f"{d} is not a directory")
    if fmt == "csv":
        return [_write(d / f"{name}.csv", to_csv(results, kind, s=s))]
    if fmt == "json":
        return [_write(d / f"{name}.json", to_json(results, kind, s=s))]
    if _empty(results):
        return []
    kind = kind or result_kind(results)
    if kind == "probe":
        try:
            return results.write_plotdata(d)
        except OSError as exc:
            raise ReportError(f"cannot write plot data under {d}: {exc}") from exc
    paths = []
    for series, (header, rows) in _series(results, kind, s).items():
        lines = ["# " + header] + [" ".join(_num(x) for x in r) for r in rows]
        paths.append(_write(d / f"{name}_{series}.dat", "\n".join(lines) + "\n"))
    return paths


def _num(x) -> str:
    if isinstance(x, int):
        return str(x)
    return f"{float(x):.9g}"
