"""Probe families for the weighted bilinear map and the restricted estimates.

The families model the interactions that stress the estimate: two pieces
of one annulus travelling in nearly the same direction, a piece near the
parabola meeting one near the reflected parabola, and antipodal pieces
whose sum lands near the time axis.  ``parallel_interaction`` is a
reconstruction from a verbal description and is labelled exploratory in
every report.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bilinear import bilinear_map
from .errors import PreconditionError, RegionOutOfRangeError
from .grid import FrequencyGrid, GridFunction, bracket, build_grid
from .norms import SpaceSpec, space_norm

__all__ = [
    "FAMILY_KINDS",
    "ESTIMATES",
    "ProbeFamily",
    "ProbeReport",
    "probe_grid",
    "make_probe_pair",
    "probe_ratio",
    "sweep",
    "proposition_pair",
    "proposition_suite",
    "PropositionTable",
    "maximize_ratio",
]

FAMILY_KINDS = ("parallel_interaction", "parabola_reflected", "time_axis_output", "random_dyadic")
EXPLORATORY = ("parallel_interaction",)
ESTIMATES = ("YY", "xxy", "E3", "E4")
DEFAULT_SHAPE = (64, 1024)
MAX_TAU_NODES = 8192
# tau_max / xi_max^2; irrational so that d_tau / d_xi^2 is too (see probe_grid)
TAU_FACTOR = 1.0 + (math.sqrt(5.0) - 1.0) / 8.0


@dataclass(frozen=True)
class ProbeFamily:
    """One member of a probe family.

    ``thickness`` is the largest modulation shell index of the slabs,
    ``width`` the angular half-width of the sectors (pi for full annuli) and
    ``offset`` the angle between the two sectors beyond the family's
    nominal arrangement.  ``d`` is the shell used by ``random_dyadic``.
    Left as ``None`` both follow the annulus: ``thickness = 2j - 4`` (the
    edge of K) and ``d = 2j - 2``.  ``parallel_interaction`` keeps the thin
    slab ``B_{0..2}`` instead.
    """

    kind: str
    j: int = 3
    d: int | None = None
    thickness: int | None = None
    seed: int = 0
    offset: float = 0.0
    width: float = math.pi / 8

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown probe family {self.kind!r}")
        if self.j < 0 or (self.thickness or 0) < 0 or (self.d or 0) < 0:
            raise ValueError("indices must be nonnegative")
        if not (0 < self.width <= math.pi):
            raise ValueError("width must lie in (0, pi]")

    @property
    def slab(self) -> int:
        if self.thickness is not None:
            return self.thickness
        return 2 if self.kind == "parallel_interaction" else max(0, 2 * self.j - 4)

    @property
    def shell(self) -> int:
        return max(0, 2 * self.j - 2) if self.d is None else self.d


def probe_grid(j: int, shape=DEFAULT_SHAPE, slab: int | None = None) -> FrequencyGrid:
    """Grid whose extents fit annulus ``j`` and all pairwise sums.

    The tau spacing is an irrational multiple of d_xi^2.  With commensurate
    spacings a fixed fraction of the xi nodes carries a tau node within
    distance 1 of the parabola, which inflates every shell thinner than a
    cell by about sqrt(d_tau); with incommensurate spacings the node
    modulations equidistribute and thin shells are sampled in proportion to
    their measure.

    With ``slab`` given, n_tau is raised (up to ``MAX_TAU_NODES``) until four
    tau nodes span the slab ``|tau - |xi|^2| < 2^(slab+1) - 1``.
    """
    X = 2.0 ** (j + 2)
    T = TAU_FACTOR * X * X
    n_tau = shape[1]
    if slab is not None:
        width = 2.0 * (2.0 ** (slab + 1) - 1.0)
        while 2.0 * T / n_tau > width / 4.0 and n_tau < MAX_TAU_NODES:
            n_tau *= 2
    return build_grid(shape[0], n_tau, X, T)


def _sector(grid: FrequencyGrid, center: float, width: float) -> np.ndarray:
    if width >= math.pi:
        return np.ones((grid.n_xi, grid.n_xi), bool)
    x = grid.xi_axis
    ang = np.arctan2(x[None, :], x[:, None])
    diff = np.angle(np.exp(1j * (ang - center)))
    return np.abs(diff) <= width


def _contract(kind: str, f: np.ndarray, g: np.ndarray, grid: FrequencyGrid, fam: ProbeFamily):
    ann = (grid.j_index == fam.j)[:, :, None]
    near_p = grid.d_index <= fam.slab
    near_pbar = dyadic_reflected(grid) <= fam.slab
    if kind == "parallel_interaction":
        rules = [(f, ann & near_p), (g, ann & near_p)]
    elif kind == "parabola_reflected":
        neg = (grid.tau_axis < 0)[None, None, :]
        rules = [(f, ann & near_p), (g, ann & near_pbar & neg)]
    elif kind == "time_axis_output":
        rules = [(f, ann & near_p), (g, ann & near_p)]
    else:
        shell = ann & (grid.d_index == fam.shell)
        rules = [(f, shell), (g, shell)]
    for v, allowed in rules:
        if not np.any(v > 0):
            raise RegionOutOfRangeError(f"{kind} j={fam.j}: requested support is empty on this grid")
        if np.any((v > 0) & ~allowed):
            raise PreconditionError(f"{kind}: synthesized support breaks the family contract")


def dyadic_reflected(grid: FrequencyGrid) -> np.ndarray:
    """Shell index of <tau + |xi|^2> (distance to the reflected parabola)."""
    return np.floor(np.log2(bracket(grid.reflected_modulation))).astype(np.int16)


def make_probe_pair(family: ProbeFamily, grid: FrequencyGrid):
    """Synthesize (f, g) for ``family`` on ``grid`` and check its contract."""
    fam = family
    ann = (grid.j_index == fam.j)[:, :, None]
    near_p = grid.d_index <= fam.slab
    if fam.kind == "parallel_interaction":
        f = ann & near_p & _sector(grid, 0.0, fam.width)[:, :, None]
        g = ann & near_p & _sector(grid, fam.offset, fam.width)[:, :, None]
        fv, gv = f.astype(float), g.astype(float)
    elif fam.kind == "parabola_reflected":
        near_pbar = dyadic_reflected(grid) <= fam.slab
        neg = (grid.tau_axis < 0)[None, None, :]
        f = ann & near_p & _sector(grid, 0.0, fam.width)[:, :, None]
        g = ann & near_pbar & neg & _sector(grid, math.pi + fam.offset, fam.width)[:, :, None]
        fv, gv = f.astype(float), g.astype(float)
    elif fam.kind == "time_axis_output":
        f = ann & near_p & _sector(grid, 0.0, fam.width)[:, :, None]
        g = ann & near_p & _sector(grid, math.pi + fam.offset, fam.width)[:, :, None]
        fv, gv = f.astype(float), g.astype(float)
    else:
        rng = np.random.default_rng(fam.seed)
        shell = ann & (grid.d_index == fam.shell)
        fv = np.where(shell, rng.uniform(0.0, 1.0, grid.shape), 0.0)
        gv = np.where(shell, rng.uniform(0.0, 1.0, grid.shape), 0.0)
    _contract(fam.kind, fv, gv, grid, fam)
    return GridFunction(grid, fv, check=False), GridFunction(grid, gv, check=False)


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------

_ZS = "Zs_surrogate"


def _ratio(out: GridFunction, f: GridFunction, g: GridFunction, s: float):
    spec = SpaceSpec(_ZS, s)
    num = space_norm(out, spec, warn_boundary=False)
    nf = space_norm(f, spec, warn_boundary=False).total
    ng = space_norm(g, spec, warn_boundary=False).total
    r = num.total / (nf * ng)
    if not (math.isfinite(r) and r > 0):
        raise RegionOutOfRangeError("probe ratio is not finite and positive; the output is empty")
    return r, num


def probe_ratio(family: ProbeFamily, s: float, grid: FrequencyGrid | None = None,
                shape=DEFAULT_SHAPE) -> float:
    """||B(f,g)||_Z / (||f||_Z ||g||_Z) for one probe."""
    grid = probe_grid(family.j, shape, family.slab) if grid is None else grid
    f, g = make_probe_pair(family, grid)
    out = bilinear_map(f, g, max_crop=None)
    return _ratio(out, f, g, s)[0]


@dataclass
class ProbeReport:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def table(self, family: str, s: float) -> list:
        return [(r["j"], r["ratio"]) for r in self.rows if r["family"] == family and r["s"] == s]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "s", "j", "ratio", "slope"])
        for r in self.rows:
            slope = self.slopes[(r["family"], r["s"])]
            w.writerow([r["family"], f"{r['s']:g}", r["j"], f"{r['ratio']:.9e}", f"{slope:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [{k: v for k, v in r.items()} for r in self.rows],
            "slopes": [{"family": k[0], "s": k[1], "slope": v} for k, v in self.slopes.items()],
            "exploratory": list(EXPLORATORY),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def write_plotdata(self, directory) -> list:
        """Two-column (j, log2 ratio) files, one per (family, s)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for fam, s in self.slopes:
            p = d / f"{fam}_s{s:+.2f}.dat"
            lines = [f"{j} {math.log2(r):.9f}" for j, r in self.table(fam, s)]
            p.write_text("# j log2_ratio\n" + "\n".join(lines) + "\n")
            paths.append(p)
        return paths


def _slope(js, ratios) -> float:
    return float(np.polyfit(np.asarray(js, float), np.log2(ratios), 1)[0])


def _family_outputs(fam: ProbeFamily, shape):
    grid = probe_grid(fam.j, shape, fam.slab)
    f, g = make_probe_pair(fam, grid)
    return f, g, bilinear_map(f, g, max_crop=None)


def _family_task(args):
    fam, s_list, shape = args
    f, g, out = _family_outputs(fam, shape)
    res = []
    for s in s_list:
        r, num = _ratio(out, f, g, s)
        res.append((s, r, num.to_dict()))
    return res


def sweep(families, s_list, j_list, grid: FrequencyGrid | None = None, *, workers: int = 1) -> ProbeReport:
    """Ratios of every family across ``s_list`` and ``j_list``.

    ``families`` holds kind names or :class:`ProbeFamily` templates (their
    ``j`` is replaced).  ``grid`` fixes the node counts; the extents follow j.
    """
    js = sorted(set(int(j) for j in j_list))
    if len(js) < 3:
        raise PreconditionError("j_list must span at least 3 octaves")
    shape = DEFAULT_SHAPE if grid is None else (grid.n_xi, grid.n_tau)
    templates = [ProbeFamily(f) if isinstance(f, str) else f for f in families]
    s_list = [float(s) for s in s_list]
    jobs = [(replace(t, j=j), s_list, shape) for t in templates for j in js]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_family_task, jobs))
    else:
        results = [_family_task(a) for a in jobs]
    rep = ProbeReport()
    for (fam, _, _), res in zip(jobs, results):
        for s, r, num in res:
            rep.rows.append({"family": fam.kind, "s": s, "j": fam.j, "ratio": r,
                             "numerator": num, "exploratory": fam.kind in EXPLORATORY})
    for t in templates:
        for s in s_list:
            tab = [(r["j"], r["ratio"]) for r in rep.rows if r["family"] == t.kind and r["s"] == s]
            rep.slopes[(t.kind, s)] = _slope(*zip(*tab))
    return rep


# ---------------------------------------------------------------------------
# restricted estimates
# ---------------------------------------------------------------------------


def _k_mask(grid: FrequencyGrid) -> np.ndarray:
    return grid.d_index <= (2 * grid.j_index.astype(np.int32) - 4)[:, :, None]


def proposition_pair(estimate: str, j: int, grid: FrequencyGrid):
    """Inputs for one restricted estimate at annulus ``j``.

    K-side inputs are the slab ``A_j cap K``; K^c-side inputs are the shells
    ``2j-3 <= d <= 2j`` of ``A_j`` just outside K, on both sides of the
    parabola.
    """
    if estimate not in ESTIMATES:
        raise ValueError(f"unknown estimate {estimate!r}")
    ann = (grid.j_index == j)[:, :, None]
    k = _k_mask(grid)
    inner = ann & k
    outer = ann & ~k & (grid.d_index <= 2 * j)
    if estimate == "YY":
        fm, gm = outer, outer
    elif estimate == "xxy":
        fm, gm = inner, inner
    else:
        fm, gm = inner, outer
    if not fm.any() or not gm.any():
        raise RegionOutOfRangeError(f"{estimate} inputs at j={j} are empty on this grid")
    return GridFunction(grid, fm.astype(float), check=False), GridFunction(grid, gm.astype(float), check=False)


def _norm(f, kind, s):
    return space_norm(f, SpaceSpec(kind, s, 0.5), warn_boundary=False)


def restricted_ratio(estimate: str, f: GridFunction, g: GridFunction, s: float, out=None) -> dict:
    """Left and right sides of one restricted estimate.

    The restriction of each input to K or K^c is applied here, so callers
    may pass unrestricted functions.
    """
    grid = f.grid
    k = _k_mask(grid)
    if estimate in ("YY",):
        f = f.restrict(~k)
        g = g.restrict(~k)
    elif estimate == "xxy":
        f = f.restrict(k)
        g = g.restrict(k)
    else:
        f = f.restrict(k)
        g = g.restrict(~k)
    if out is None:
        out = bilinear_map(f, g, max_crop=None)
    full = _norm(out, _ZS, s)
    if estimate == "YY":
        num = full
        den = _norm(f, "Ys", s).total * _norm(g, "Ys", s).total
    elif estimate == "xxy":
        num = full
        den = _norm(f, "Xsb_besov", s).total * _norm(g, "Xsb_besov", s).total
    elif estimate == "E3":
        num = _norm(out.restrict(k), "Xsb_besov", s)
        den = _norm(f, "Xsb_besov", s).total * _norm(g, "Ys", s).total
    else:
        num = _norm(out.restrict(~k), "Ys", s)
        den = _norm(f, "Xsb_besov", s).total * _norm(g, "Ys", s).total
    if den <= 0:
        raise RegionOutOfRangeError(f"{estimate}: restricted inputs vanish")
    return {"ratio": num.total / den, "numerator": num.total, "denominator": den,
            "full_numerator": full.total}


@dataclass
class PropositionTable:
    estimate: str
    s: float
    rows: list
    slope: float

    def to_dict(self) -> dict:
        return asdict(self)


def _prop_task(args):
    estimate, j, s_list, shape = args
    grid = probe_grid(j, shape)
    f, g = proposition_pair(estimate, j, grid)
    out = bilinear_map(f, g, max_crop=None)
    return [restricted_ratio(estimate, f, g, s, out=out) for s in s_list]


def proposition_suite(s, grid: FrequencyGrid | None = None, j_list=(2, 3, 4, 5), *,
                      workers: int = 1, check_range: bool = True) -> dict:
    """Ratio tables of the four restricted estimates across ``j_list``.

    ``s`` is one value or a sequence.  Values outside (-1, 0) are allowed
    only with ``check_range=False`` (report-only runs).
    """
    s_list = [float(x) for x in np.atleast_1d(s)]
    if check_range and not all(-1.0 < x < 0.0 for x in s_list):
        raise PreconditionError("proposition_suite needs -1 < s < 0")
    shape = DEFAULT_SHAPE if grid is None else (grid.n_xi, grid.n_tau)
    js = sorted(set(int(j) for j in j_list))
    jobs = [(e, j, s_list, shape) for e in ESTIMATES for j in js]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_prop_task, jobs))
    else:
        results = [_prop_task(a) for a in jobs]
    tables = {}
    for e in ESTIMATES:
        for a, s_ in enumerate(s_list):
            rows = [{"j": j, **res[a]} for (e2, j, _, _), res in zip(jobs, results) if e2 == e]
            slope = _slope([r["j"] for r in rows], [r["ratio"] for r in rows])
            tables[(e, s_)] = PropositionTable(e, s_, rows, slope)
    return tables


def proposition_csv(tables: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimate", "s", "j", "ratio", "numerator", "denominator", "slope"])
    for (e, s), t in tables.items():
        for r in t.rows:
            w.writerow([e, f"{s:g}", r["j"], f"{r['ratio']:.9e}", f"{r['numerator']:.9e}",
                        f"{r['denominator']:.9e}", f"{t.slope:.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


def _neighbour(fam: ProbeFamily, rng, j_range):
    coord = rng.choice(["j", "d", "thickness", "offset", "width"])
    if coord == "j":
        j = int(np.clip(fam.j + rng.choice([-1, 1]), *j_range))
        return replace(fam, j=j)
    if coord == "d":
        return replace(fam, d=int(max(0, fam.shell + rng.choice([-1, 1]))))
    if coord == "thickness":
        return replace(fam, thickness=int(np.clip(fam.slab + rng.choice([-1, 1]), 0, 2 * fam.j)))
    if coord == "offset":
        return replace(fam, offset=float(fam.offset + rng.normal(0.0, 0.3)))
    w = float(np.clip(fam.width * math.exp(rng.normal(0.0, 0.4)), math.pi / 64, math.pi))
    return replace(fam, width=w)


def maximize_ratio(s: float, family, budget: int = 32, seed: int = 0, grid: FrequencyGrid | None = None,
                   j_range=(2, 5)):
    """Randomized coordinate search for the largest probe ratio.

    Returns ``(best_family, best_ratio, history)``; ``history`` lists every
    evaluated (family, ratio), including proposals whose support was empty
    (ratio ``None``).
    """
    if budget < 32:
        raise PreconditionError("budget must be at least 32 evaluations")
    shape = DEFAULT_SHAPE if grid is None else (grid.n_xi, grid.n_tau)
    fam = ProbeFamily(family) if isinstance(family, str) else family
    rng = np.random.default_rng(seed)
    history = []
    best, best_r = None, -math.inf
    current, current_r = fam, None
    for n in range(budget):
        cand = current if n == 0 else _neighbour(current, rng, j_range)
        try:
            r = probe_ratio(cand, s, shape=shape)
        except (RegionOutOfRangeError, PreconditionError):
            history.append((cand, None))
            continue
        history.append((cand, r))
        if current_r is None or r >= current_r:
            current, current_r = cand, r
        if r > best_r:
            best, best_r = cand, r
    if best is None:
        raise RegionOutOfRangeError("no probe in the search had a nonempty support")
    return best, best_r, history
