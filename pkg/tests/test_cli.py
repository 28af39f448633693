import json
import subprocess
import sys

import pytest

from dyadiclab import errors
from dyadiclab.cli import ENV_OUT_DIR, load_config, main, run_config

LEMMA_CFG = """
[experiment]
kind = lemmas
seed = 0

[grid]
n_xi = 32
n_tau = 512

[lemmas]
names = INV_MOD
"""

CLIP_CFG = """
[experiment]
kind = lemmas

[grid]
n_xi = 32
n_tau = 512
xi_max = 8.0
tau_max = 60.0
adapt = false
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def only_run(root):
    (d,) = [p for p in root.iterdir() if p.is_dir()]
    return d


def test_lemma_config_runs(tmp_path):
    code, out = run_config(write(tmp_path, LEMMA_CFG), out_dir=tmp_path / "runs")
    assert code == 0
    rows = (out / "fits.csv").read_text().splitlines()
    assert rows[0] == "lemma,index,predicted,fitted,residual,n_samples"
    assert [r.split(",")[1] for r in rows[1:]] == ["d", "k"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == "lemmas" and man["seed"] == 0
    assert "fits.csv" in man["outputs"]
    assert (out / "config.ini").is_file()


def test_clipping_config_fails(tmp_path, capsys):
    code, out = run_config(write(tmp_path, CLIP_CFG), out_dir=tmp_path / "runs")
    assert code == errors.ParabolaClippingError.exit_code != 0
    assert out is None
    assert "parabola clipping" in capsys.readouterr().err


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, LEMMA_CFG)
    _, a = run_config(cfg, out_dir=tmp_path / "a")
    _, b = run_config(cfg, out_dir=tmp_path / "b")
    for name in ("fits.csv", "samples.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_exit_codes_distinct():
    classes = [c for c in vars(errors).values()
               if isinstance(c, type) and issubclass(c, errors.DyadicLabError)]
    codes = [c.exit_code for c in classes]
    assert len(classes) >= 12
    assert len(set(codes)) == len(codes)
    assert 0 not in codes and 2 not in codes  # 2 is argparse's usage error


def test_env_overrides_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT_DIR, str(tmp_path / "env"))
    cfg =write(tmp_path, LEMMA_CFG.replace("seed = 0", "seed = 0\nout_dir = %s" % (tmp_path / "cfg")))
    assert main(["--config", str(cfg), "lemma"]) == 0
    assert only_run(tmp_path / "env").name.startswith("lemmas-")
    assert not (tmp_path / "cfg").exists()
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path / "flag"), "lemma"]) == 0
    assert (tmp_path / "flag").is_dir()


def test_env_does_not_touch_other_settings(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT_DIR, str(tmp_path / "env"))
    monkeypatch.setenv("DYADICLAB_SEED", "5")
    assert main(["--config", str(write(tmp_path, LEMMA_CFG)), "lemma"]) == 0
    man = json.loads((only_run(tmp_path / "env") / "manifest.json").read_text())
    assert man["seed"] == 0


def test_seed_flag_and_set(tmp_path):
    cfg = write(tmp_path, LEMMA_CFG)
    assert main(["--config", str(cfg), "--seed", "9", "--out-dir", str(tmp_path / "o"), "lemma",
                 "--set", "lemmas.profile=random"]) == 0
    man = json.loads((only_run(tmp_path / "o") / "manifest.json").read_text())
    assert man["seed"] == 9
    assert man["config"]["lemmas"]["profile"] == "random"


def test_kind_mismatch(tmp_path):
    cfg = write(tmp_path, LEMMA_CFG)
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path), "probe"]) == errors.ConfigError.exit_code


def test_bad_set_syntax(tmp_path):
    cfg = write(tmp_path, LEMMA_CFG)
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path), "lemma", "--set", "nodot"]) == 20


def test_missing_config(tmp_path):
    assert main(["--config", str(tmp_path / "none.ini"), "lemma"]) == errors.ConfigError.exit_code


def test_unknown_experiment(tmp_path):
    code, _ = run_config(write(tmp_path, "[experiment]\nkind = cooking\n"), out_dir=tmp_path)
    assert code == errors.ConfigError.exit_code


def test_bad_grid_size(tmp_path):
    cfg = write(tmp_path, LEMMA_CFG.replace("n_xi = 32", "n_xi = 48"))
    code, _ = run_config(cfg, out_dir=tmp_path / "r")
    assert code == errors.GridSizeError.exit_code


def test_norm_and_decompose(tmp_path):
    out = tmp_path / "o"
    args = ["--out-dir", str(out)]
    assert main(args + ["norm", "--set", "grid.xi_max=8", "--set", "grid.tau_max=68",
                        "--set", "grid.n_xi=32", "--set", "grid.n_tau=256"]) == 0
    assert main(args + ["decompose", "--set", "grid.xi_max=8", "--set", "grid.tau_max=68",
                        "--set", "grid.n_xi=32", "--set", "grid.n_tau=256"]) == 0
    names = sorted(p.name.split("-")[0] for p in out.iterdir())
    assert names == ["norms", "norms"]
    files = sorted(f.name for d in out.iterdir() for f in d.iterdir())
    assert "norms.csv" in files and "decompose.csv" in files


def test_solve_splitstep(tmp_path):
    assert main(["--out-dir", str(tmp_path), "solve", "--set", "solver.n=16",
                 "--set", "solver.T=0.1", "--set", "solver.dt=0.05"]) == 0
    d = only_run(tmp_path)
    assert any(f.suffix == ".csv" for f in d.iterdir())


def test_report_subcommand(tmp_path):
    _, run = run_config(write(tmp_path, LEMMA_CFG), out_dir=tmp_path / "runs")
    assert main(["report", str(run), "--format", "plotdata"]) == 0
    runs = sorted((tmp_path / "runs").iterdir())
    assert len(runs) == 2
    again = [r for r in runs if r != run][0]
    assert any((again / "plotdata").iterdir())
    assert main(["report", str(tmp_path / "nowhere")]) == errors.ConfigError.exit_code


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "dyadiclab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("norm", "decompose", "lemma", "probe", "proposition", "solve", "report"):
        assert sub in res.stdout


def test_load_config_defaults():
    cp = load_config(text="[experiment]\nkind = solver\n")
    assert cp.get("grid", "n_xi") == "64"
    with pytest.raises(errors.ConfigError):
        load_config(text="not an ini")
