"""Configuration-driven experiment runner.

Configs are INI files.  ``[experiment] kind`` names one of ``norms``,
``lemmas``, ``probes``, ``proposition`` or ``solver``; each kind reads its
own section (see ``docs/config.md``).  Every run writes into a fresh
timestamped directory under the output root together with ``config.ini``
(the effective configuration) and ``manifest.json``.

The output root comes from ``--out-dir``, then the ``DYADICLAB_OUT_DIR``
environment variable, then ``[experiment] out_dir``, then ``./runs``.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import io
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, DyadicLabError, ReportError
from .grid import (FrequencyGrid, GaussianBump, OnMask, ParabolaSlab, RandomOnMask,
                   ReflectedSlab, build_grid, synthesize)
from .lemmas import DEFAULT_SHAPE, builtin_lemmas, get_lemma, run_lemma
from .norms import SPACE_KINDS, SpaceSpec, space_norm
from .probes import FAMILY_KINDS, maximize_ratio, proposition_suite, sweep
from .regions import dyadic_decompose, region_mask
from .reports import emit_report
from .solver import (PeriodicBox, continuity_probe, picard_iterate, rough_data,
                     self_convergence, splitstep_solve)

__all__ = ["EXPERIMENTS", "ENV_OUT_DIR", "load_config", "run_config", "run_experiment", "main"]

EXPERIMENTS = ("norms", "lemmas", "probes", "proposition", "solver")
ENV_OUT_DIR = "DYADICLAB_OUT_DIR"

SUBCOMMANDS = {
    "norm": ("norms", {"norms": {"mode": "norms"}}),
    "decompose": ("norms", {"norms": {"mode": "decompose"}}),
    "lemma": ("lemmas", {}),
    "probe": ("probes", {}),
    "proposition": ("proposition", {}),
    "solve": ("solver", {}),
}

DEFAULTS = {
    "experiment": {"seed": "0", "workers": "1"},
    "grid": {"n_xi": str(DEFAULT_SHAPE[0]), "n_tau": str(DEFAULT_SHAPE[1]), "adapt": "true"},
    "function": {"shape": "parabola_slab", "i": "2", "d": "0", "side": "both", "value": "1.0"},
    "norms": {"mode": "norms", "kinds": ",".join(SPACE_KINDS[:5]), "s": "-0.75", "b": "0.5"},
    "lemmas": {"names": "INV_MOD", "profile": "constant"},
    "probes": {"families": ",".join(FAMILY_KINDS), "s": "-0.75,-0.5", "j": "2,3,4,5",
               "maximize": "false", "budget": "32"},
    "proposition": {"s": "-0.9,-0.75,-0.5", "report_s": "-1.05", "j": "2,3,4,5"},
    "solver": {"mode": "splitstep", "n": "64", "T": "1.0", "dt": "0.01", "s": "-0.75",
               "data": "rough", "amplitude": "0.1", "sizes": "1e-2,5e-3,2.5e-3",
               "n_iter": "5", "picard_j": "1", "picard_eps": "0.0125"},
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    return cp


def load_config(path=None, text: str | None = None) -> configparser.ConfigParser:
    cp = _parser()
    cp.read_dict(DEFAULTS)
    try:
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file {p} does not exist")
            cp.read_string(p.read_text(), source=str(p))
        if text is not None:
            cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return cp


def _get(cp, section, key, conv=str):
    try:
        raw = cp.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError) as exc:
        raise ConfigError(f"missing [{section}] {key}") from exc
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is invalid: {exc}") from exc


def _opt(cp, section, key, conv=str, default=None):
    if cp.has_option(section, key) and cp.get(section, key).strip() != "":
        return _get(cp, section, key, conv)
    return default


def _bool(x: str) -> bool:
    v = x.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(x: str) -> list:
    return [float(v) for v in x.split(",") if v.strip()]


def _ints(x: str) -> list:
    return [int(v) for v in x.split(",") if v.strip()]


def _names(x: str) -> list:
    return [v.strip() for v in x.split(",") if v.strip()]


def _grid(cp) -> tuple[tuple[int, int], FrequencyGrid | None]:
    shape = (_get(cp, "grid", "n_xi", int), _get(cp, "grid", "n_tau", int))
    X = _opt(cp, "grid", "xi_max", float)
    T = _opt(cp, "grid", "tau_max", float)
    if (X is None) != (T is None):
        raise ConfigError("[grid] needs both xi_max and tau_max or neither")
    grid = build_grid(shape[0], shape[1], X, T) if X is not None else None
    if grid is None:
        # node counts are validated even when the extents are adaptive
        build_grid(shape[0], shape[1], 1.0, 5.0)
    return shape, grid


# ---------------------------------------------------------------------------
# output directory
# ---------------------------------------------------------------------------


def _out_root(cp, cli_value) -> Path:
    if cli_value:
        return Path(cli_value)
    env = os.environ.get(ENV_OUT_DIR)
    if env:
        return Path(env)
    return Path(_opt(cp, "experiment", "out_dir", str, "runs"))


def _run_dir(root: Path, kind: str) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    try:
        root.mkdir(parents=True, exist_ok=True)
        n = 0
        while True:
            d = root / (f"{kind}-{stamp}" + (f"-{n}" if n else ""))
            try:
                d.mkdir()
                return d
            except FileExistsError:
                n += 1
    except OSError as exc:
        raise ReportError(f"cannot create output directory under {root}: {exc}") from exc


def _config_text(cp) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _write_text(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _function(cp, grid: FrequencyGrid):
    sec = "function"
    shape = _get(cp, sec, "shape")
    value = _get(cp, sec, "value", float)
    i = _get(cp, sec, "i", int)
    d = _get(cp, sec, "d", int)
    side = _get(cp, sec, "side")
    if shape == "parabola_slab":
        desc = ParabolaSlab(i, d, _opt(cp, sec, "d_hi", int), side, value)
    elif shape == "reflected_slab":
        desc = ReflectedSlab(i, d, side, value)
    elif shape == "gaussian":
        desc = GaussianBump((_get(cp, sec, "xi1", float), _get(cp, sec, "xi2", float)),
                            _get(cp, sec, "tau", float), _get(cp, sec, "width_xi", float),
                            _get(cp, sec, "width_tau", float), value)
    elif shape == "random":
        mask = region_mask(grid, "A", i) & region_mask(grid, "B", d)
        desc = RandomOnMask(mask, _get(cp, "experiment", "seed", int))
    elif shape == "annulus":
        desc = OnMask(region_mask(grid, "A", i), value)
    else:
        raise ConfigError(f"unknown [function] shape {shape!r}")
    return synthesize(grid, desc)


def _exp_norms(cp, out: Path, workers: int, fmts) -> list:
    shape, grid = _grid(cp)
    if grid is None:
        i = _get(cp, "function", "i", int)
        X = 2.0 ** (i + 2)
        grid = build_grid(shape[0], shape[1], X, X * X + 4)
    f = _function(cp, grid)
    mode = _get(cp, "norms", "mode")
    if mode == "decompose":
        lines = ["j,d,l2"] + [f"{p.j},{p.d},{p.l2:.12e}" for p in dyadic_decompose(f)]
        path = out / "decompose.csv"
        _write_text(path, "\n".join(lines) + "\n")
        return [path]
    if mode != "norms":
        raise ConfigError(f"unknown [norms] mode {mode!r}")
    s = _get(cp, "norms", "s", float)
    b = _get(cp, "norms", "b", float)
    rows = ["kind,s,b,j,value"]
    results = {}
    for kind in _names(_get(cp, "norms", "kinds")):
        bb = 0.5 if kind in ("Zs_surrogate", "Ws") else b
        nb = space_norm(f, SpaceSpec(kind, s, bb), warn_boundary=False)
        results[kind] = nb.to_dict()
        rows.append(f"{kind},{s:g},{bb:g},total,{nb.total:.12e}")
        rows += [f"{kind},{s:g},{bb:g},{j},{v:.12e}" for j, v in nb.per_shell]
    path = out / "norms.csv"
    _write_text(path, "\n".join(rows) + "\n")
    jpath = out / "results.json"
    _write_text(jpath, json.dumps(results, sort_keys=True, indent=2) + "\n")
    return [path, jpath]


def _exp_lemmas(cp, out: Path, workers: int, fmts) -> list:
    shape, grid = _grid(cp)
    adapt = _get(cp, "grid", "adapt", _bool)
    seed = _get(cp, "experiment", "seed", int)
    profile = _get(cp, "lemmas", "profile")
    names = _names(_get(cp, "lemmas", "names"))
    try:
        specs = builtin_lemmas() if names == ["all"] else [get_lemma(n) for n in names]
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    if grid is None and not adapt:
        raise ConfigError("[grid] adapt = false needs xi_max and tau_max")
    tmpl = grid if grid is not None else build_grid(shape[0], shape[1], 1.0, 5.0)
    fits = [run_lemma(s, tmpl, adapt=adapt, workers=workers, seed=seed, profile=profile) for s in specs]
    paths = _emit(fits, out, "fits", fmts, ("csv",))
    rows = ["lemma,sweep,x,lhs,rhs,value,unresolved"]
    for f in fits:
        for smp in f.samples:
            rows.append(",".join([f.lemma, smp.sweep, f"{smp.extra['x']:g}", f"{smp.lhs:.9e}",
                                  f"{smp.rhs:.9e}", f"{smp.value:.6f}",
                                  "1" if "unresolved" in smp.extra else "0"]))
    sp = out / "samples.csv"
    _write_text(sp, "\n".join(rows) + "\n")
    paths.append(sp)
    paths += _emit(fits, out, "results", fmts, ("json",))
    return paths


def _exp_probes(cp, out: Path, workers: int, fmts) -> list:
    shape, grid = _grid(cp)
    fams = _names(_get(cp, "probes", "families"))
    for f in fams:
        if f not in FAMILY_KINDS:
            raise ConfigError(f"unknown probe family {f!r}")
    s_list = _get(cp, "probes", "s", _floats)
    j_list = _get(cp, "probes", "j", _ints)
    tmpl = build_grid(shape[0], shape[1], 1.0, 5.0)
    rep = sweep(fams, s_list, j_list, tmpl, workers=workers)
    paths = _emit(rep, out, "probes", fmts, ("csv",))
    paths += _emit(rep, out, "results", fmts, ("json",))
    paths += _emit(rep, out, "probes", fmts, ("plotdata",))
    if _get(cp, "probes", "maximize", _bool):
        budget = _get(cp, "probes", "budget", int)
        seed = _get(cp, "experiment", "seed", int)
        rows = ["family,s,ratio,j,d,thickness,offset,width"]
        for fam in fams:
            for s in s_list:
                best, r, _ = maximize_ratio(s, fam, budget, seed, tmpl)
                rows.append(f"{fam},{s:g},{r:.9e},{best.j},{best.shell},{best.slab},"
                            f"{best.offset:.6f},{best.width:.6f}")
        mp = out / "maximize.csv"
        _write_text(mp, "\n".join(rows) + "\n")
        paths.append(mp)
    return paths


def _exp_proposition(cp, out: Path, workers: int, fmts) -> list:
    shape, _ = _grid(cp)
    tmpl = build_grid(shape[0], shape[1], 1.0, 5.0)
    js = _get(cp, "proposition", "j", _ints)
    s_list = _get(cp, "proposition", "s", _floats)
    tabs = proposition_suite(s_list, tmpl, js, workers=workers)
    paths = _emit(tabs, out, "proposition", fmts, ("csv",))
    paths += _emit(tabs, out, "results", fmts, ("json",))
    paths += _emit(tabs, out, "proposition", fmts, ("plotdata",))
    extra = _opt(cp, "proposition", "report_s", _floats, [])
    if extra:
        rep = proposition_suite(extra, tmpl, js, workers=workers, check_range=False)
        paths += _emit(rep, out, "report_only", fmts, ("csv",))
    return paths


def _solver_data(cp, box: PeriodicBox, s: float):
    kind = _get(cp, "solver", "data")
    amp = _get(cp, "solver", "amplitude", float)
    seed = _get(cp, "experiment", "seed", int)
    if kind == "rough":
        return rough_data(box, s, amp, seed)
    if kind == "constant":
        return np.full((box.n, box.n), amp, dtype=complex)
    if kind == "smooth":
        X, Y = box.coords()
        return amp * (np.exp(1j * X) * np.cos(Y) + 0.5)
    raise ConfigError(f"unknown [solver] data {kind!r}")


def _exp_solver(cp, out: Path, workers: int, fmts) -> list:
    mode = _get(cp, "solver", "mode")
    s = _get(cp, "solver", "s", float)
    box = PeriodicBox(_get(cp, "solver", "n", int))
    T = _get(cp, "solver", "T", float)
    dt = _get(cp, "solver", "dt", float)
    if mode == "splitstep":
        tr = splitstep_solve(_solver_data(cp, box, s), T, dt, box)
        return _emit(tr, out, "trajectory", fmts, ("csv",), s=s)
    if mode == "convergence":
        r = self_convergence(_solver_data(cp, box, s), T, dt, box)
        path = out / "convergence.csv"
        _write_text(path, "dt,error_dt,error_half,ratio,order\n"
                    f"{dt:g},{r['error_dt']:.9e},{r['error_half']:.9e},{r['ratio']:.6f},{r['order']:.6f}\n")
        return [path]
    if mode == "continuity":
        tab = continuity_probe(_solver_data(cp, box, s), _get(cp, "solver", "sizes", _floats), s,
                               T=T, dt=dt, box=box, seed=_get(cp, "experiment", "seed", int))
        return _emit(tab, out, "continuity", fmts, ("csv",))
    if mode == "picard":
        shape, grid = _grid(cp)
        if grid is None:
            grid = build_grid(shape[0], shape[1], 8.0, 68.0)
        j = _get(cp, "solver", "picard_j", int)
        eps = _get(cp, "solver", "picard_eps", float)
        data = np.where(grid.j_index == j, eps, 0.0)
        res = picard_iterate(data, s, _get(cp, "solver", "n_iter", int), grid)
        return _emit(res, out, "picard", fmts, ("csv",)) + _emit(res, out, "results", fmts, ("json",))
    raise ConfigError(f"unknown [solver] mode {mode!r}")


def _emit(results, out: Path, name: str, fmts, default, **kw) -> list:
    """Write ``results`` in ``default`` formats.

    When ``fmts`` is given only the primary (csv) emission of a runner is
    kept and written in those formats instead.
    """
    if fmts is not None and default != ("csv",):
        return []
    paths = []
    for fmt in (default if fmts is None else fmts):
        sub = out / "plotdata" if fmt == "plotdata" else out
        paths += emit_report(results, fmt, sub, name=name, **kw)
    return paths


_RUNNERS = {
    "norms": _exp_norms,
    "lemmas": _exp_lemmas,
    "probes": _exp_probes,
    "proposition": _exp_proposition,
    "solver": _exp_solver,
}


def run_experiment(cp, *, seed=None, workers=None, out_dir=None, formats=None) -> Path:
    """Run the experiment described by ``cp``; returns its output directory.

    ``formats`` replaces the default report formats of the experiment.
    """
    if seed is not None:
        cp.set("experiment", "seed", str(int(seed)))
    if workers is not None:
        cp.set("experiment", "workers", str(int(workers)))
    kind = _opt(cp, "experiment", "kind")
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {kind!r}; expected one of {', '.join(EXPERIMENTS)}")
    n_workers = _get(cp, "experiment", "workers", int)
    if n_workers < 1:
        raise ConfigError("[experiment] workers must be at least 1")
    _grid(cp)
    out = _run_dir(_out_root(cp, out_dir), kind)
    text = _config_text(cp)
    _write_text(out / "config.ini", text)
    outputs = _RUNNERS[kind](cp, out, n_workers, formats)
    shape, grid = _grid(cp)
    manifest = {
        "experiment": kind,
        "seed": _get(cp, "experiment", "seed", int),
        "workers": n_workers,
        "grid": {"n_xi": shape[0], "n_tau": shape[1],
                 "extents": None if grid is None else grid.describe(),
                 "adapt": _get(cp, "grid", "adapt", _bool)},
        "config": {sec: dict(cp[sec]) for sec in cp.sections()},
        "versions": {"dyadiclab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "rerun": "dyadiclab --config config.ini report .",
    }
    _write_text(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return out


def run_config(path, *, seed=None, workers=None, out_dir=None):
    """Run a config file.  Returns ``(exit_status, output_directory or None)``."""
    try:
        cp = load_config(path)
        return 0, run_experiment(cp, seed=seed, workers=workers, out_dir=out_dir)
    except DyadicLabError as exc:
        print(f"dyadiclab: error: {exc}", file=sys.stderr)
        return exc.exit_code, None
    except (ValueError, KeyError) as exc:
        print(f"dyadiclab: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code, None


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dyadiclab", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--seed", type=int, help="override [experiment] seed")
    ap.add_argument("--workers", type=int, help="override [experiment] workers")
    ap.add_argument("--out-dir", help=f"output root (else ${ENV_OUT_DIR}, else config, else ./runs)")
    ap.add_argument("--version", action="version", version=f"dyadiclab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "norm": "evaluate function-space norms of a synthesized function",
        "decompose": "dyadic (j, d) decomposition table of a synthesized function",
        "lemma": "run lemma specs and fit their slopes",
        "probe": "sweep probe families across s and j",
        "proposition": "restricted-estimate ratio tables",
        "solve": "split-step solver, self-convergence, continuity or Picard runs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
    r = sub.add_parser("report", help="re-run a finished run directory from its config and emit a format")
    r.add_argument("run_dir")
    r.add_argument("--format", choices=("csv", "json", "plotdata"), default="csv")
    return ap


def _apply_sets(cp, sets):
    for item in sets:
        key, sep, value = item.partition("=")
        sec, dot, opt = key.partition(".")
        if not sep or not dot or not sec or not opt:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, opt, value)


def _report(args) -> Path:
    run = Path(args.run_dir)
    cfg = run / "config.ini"
    if not cfg.is_file():
        raise ConfigError(f"{run} has no config.ini")
    cp = load_config(cfg)
    return run_experiment(cp, seed=args.seed, workers=args.workers,
                          out_dir=args.out_dir or run.parent, formats=(args.format,))


def main(argv=None) -> int:
    args = _arg_parser().parse_args(argv)
    try:
        if args.command == "report":
            out = _report(args)
        else:
            kind, preset = SUBCOMMANDS[args.command]
            cp = load_config(args.config)
            if cp.has_option("experiment", "kind") and cp.get("experiment", "kind") != kind:
                raise ConfigError(f"config describes a {cp.get('experiment', 'kind')!r} experiment, "
                                  f"not {kind!r}")
            cp.set("experiment", "kind", kind)
            for sec, vals in preset.items():
                for k, v in vals.items():
                    cp.set(sec, k, v)
            _apply_sets(cp, args.set)
            out = run_experiment(cp, seed=args.seed, workers=args.workers, out_dir=args.out_dir)
    except DyadicLabError as exc:
        print(f"dyadiclab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"dyadiclab: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
