"""Dyadic inequalities stated as scaling laws and checked by regression.

Each :class:`LemmaSpec` names a measured left-hand quantity, the product of
input norms it is compared with, and the predicted exponent of ``2`` in
each dyadic index.  :func:`run_lemma` evaluates the quantity at every point
of the LemmaSpec's sweeps and fits ``log2(lhs / rhs)`` against the swept
coordinate.

A sweep may move several indices at once (for instance ``i = j = t`` with
``d = 2t - 4``).  Its predicted slope is then the exponent vector
contracted with the direction of the sweep.  Every sample runs on its own
grid of fixed node counts whose extents follow the sample's indices, so a
desk-size lattice resolves each configuration at the same relative scale.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .bilinear import convolve, weighted_convolve
from .errors import FitError, PreconditionError, RegionOutOfRangeError
from .grid import FrequencyGrid, GridFunction, bracket, build_grid
from .norms import log2_weight
from .parabola import ParabolaMeasure, annulus_measure, measure_convolve

__all__ = [
    "Sweep",
    "LemmaSpec",
    "Sample",
    "FitEntry",
    "SlopeFit",
    "builtin_lemmas",
    "get_lemma",
    "run_lemma",
    "fit_slope",
    "DEFAULT_SHAPE",
]

DEFAULT_SHAPE = (64, 1024)
CSV_COLUMNS = ("lemma", "index", "predicted", "fitted", "residual", "n_samples")


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sweep:
    """Points visited along one direction in index space.

    ``regressor`` names the coordinate the log-ratio is fitted against.  It
    is either an index of the lemma or an auxiliary key such as ``t``.
    """

    label: str
    regressor: str
    points: tuple

    def values(self) -> np.ndarray:
        return np.array([float(p[self.regressor]) for p in self.points])


@dataclass(frozen=True)
class LemmaSpec:
    name: str
    statement: str
    exponents: dict
    sweeps: tuple
    builder: Callable
    grid_rule: Callable
    kind: str = "sharp"
    constraints: tuple = ()
    bound: Callable | None = None
    tolerance: float = 0.15
    notes: str = ""

    def __post_init__(self):
        if self.kind not in ("sharp", "domination"):
            raise ValueError("kind must be 'sharp' or 'domination'")
        if self.kind == "domination" and self.bound is None:
            raise ValueError("domination specs need a bound")

    @property
    def index_ranges(self) -> dict:
        out: dict = {}
        for sw in self.sweeps:
            for p in sw.points:
                for key, v in p.items():
                    lo, hi = out.get(key, (v, v))
                    out[key] = (min(lo, v), max(hi, v))
        return out

    def predicted_slope(self, sweep: Sweep) -> float:
        """Exponent vector contracted with the sweep direction."""
        x = sweep.values()
        total = 0.0
        for key, e in self.exponents.items():
            y = np.array([float(p[key]) for p in sweep.points])
            total += e * np.polyfit(x, y, 1)[0]
        return float(round(total, 12))

    def check_point(self, point: dict):
        for expr in self.constraints:
            if not eval(expr, {"__builtins__": {}, "max": max, "min": min, "abs": abs}, dict(point)):
                raise PreconditionError(f"{self.name}: constraint {expr!r} fails at {point}")

    def validate(self):
        for sw in self.sweeps:
            if self.kind == "sharp" and len({float(v) for v in sw.values()}) < 4:
                raise FitError(f"{self.name}/{sw.label}: fewer than 4 octaves")
            for p in sw.points:
                for key in self.exponents:
                    if key not in p:
                        raise ValueError(f"{self.name}: point {p} lacks index {key!r}")
                self.check_point(p)
        return self


@dataclass
class Sample:
    sweep: str
    point: dict
    lhs: float
    rhs: float
    value: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"sweep": self.sweep, "point": dict(self.point), "lhs": self.lhs,
                "rhs": self.rhs, "value": self.value, "extra": dict(self.extra)}


@dataclass
class FitEntry:
    index: str
    predicted: float
    fitted: float
    residual: float
    n_samples: int
    tolerance: float = 0.15
    kind: str = "sharp"
    intercept: float = math.nan

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.fitted):
            return self.kind == "domination" and self.fitted == -math.inf
        if self.kind == "domination":
            return self.fitted <= 0.0
        return abs(self.fitted - self.predicted) <= self.tolerance


@dataclass
class SlopeFit:
    """Fitted slopes, one entry per sweep (or per design column)."""

    lemma: str
    kind: str
    entries: list
    samples: list = field(default_factory=list)
    notes: str = ""

    @property
    def slopes(self) -> dict:
        return {e.index: e.fitted for e in self.entries}

    @property
    def residual(self) -> float:
        r = [e.residual for e in self.entries if math.isfinite(e.residual)]
        return max(r) if r else math.nan

    @property
    def passed(self) -> bool:
        return bool(self.entries) and all(e.passed for e in self.entries)

    def rows(self) -> list:
        return [(self.lemma, e.index, e.predicted, e.fitted, e.residual, e.n_samples)
                for e in self.entries]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(CSV_COLUMNS)
        for row in self.rows():
            w.writerow([row[0], row[1]] + [_fmt(x) for x in row[2:5]] + [row[5]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "kind": self.kind,
            "passed": self.passed,
            "entries": [
                {"index": e.index, "predicted": e.predicted, "fitted": e.fitted,
                 "residual": e.residual, "n_samples": e.n_samples,
                 "intercept": e.intercept, "passed": e.passed}
                for e in self.entries
            ],
            "samples": [s.to_dict() for s in self.samples],
            "notes": self.notes,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(self.to_dict()), **kw)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return str(x)
    return f"{x:.6f}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


def fit_slope(samples, names=None) -> SlopeFit:
    """Least-squares fit of log2 values against index vectors.

    ``samples`` is a sequence of ``(index_vector, log2_value)``.  Columns
    that do not vary are dropped; the remaining design (with an intercept)
    must have full rank and at least 4 rows.
    """
    samples = list(samples)
    if len(samples) < 4:
        raise FitError(f"need at least 4 samples, got {len(samples)}")
    X = np.array([np.atleast_1d(np.asarray(v, dtype=float)) for v, _ in samples])
    y = np.array([float(val) for _, val in samples])
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise FitError("non-finite sample")
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{c}" for c in range(p)]
    if len(names) != p:
        raise ValueError("names must match the index-vector length")
    keep = [c for c in range(p) if np.ptp(X[:, c]) > 0]
    if not keep:
        raise FitError("degenerate design: no index varies")
    A = np.column_stack([X[:, keep], np.ones(len(y))])
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise FitError("degenerate design matrix")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    rms = float(np.sqrt(np.mean(res**2)))
    entries = [FitEntry(names[c], math.nan, float(coef[n]), rms, len(y), intercept=float(coef[-1]))
               for n, c in enumerate(keep)]
    table = [Sample("", dict(zip(names, map(float, v))), math.nan, math.nan, float(val))
             for v, val in samples]
    return SlopeFit("", "sharp", entries, table)


# ---------------------------------------------------------------------------
# measurement helpers
# ---------------------------------------------------------------------------


def _l2(v, g: FrequencyGrid) -> float:
    return float(np.sqrt(np.sum(v * v) * g.cell_volume))


def _l2l1(v, g: FrequencyGrid) -> float:
    col = v.sum(axis=2) * g.d_tau
    return float(np.sqrt(np.sum(col * col) * g.d_xi**2))


def _xsb(v, g: FrequencyGrid, b: float) -> float:
    return _l2(v * bracket(g.modulation) ** b, g)


def _annulus(g, i):
    return g.j_index == i


def _slab_mask(g, i, d):
    return _annulus(g, i)[:, :, None] & (g.d_index == d)


def _k_mask(g):
    return g.d_index <= (2 * g.j_index.astype(np.int32) - 4)[:, :, None]


def _block(mask, rng=None) -> np.ndarray:
    """Constant one on ``mask``, or seeded values in [1/2, 3/2]."""
    if rng is None:
        return mask.astype(float)
    return np.where(mask, rng.uniform(0.5, 1.5, mask.shape), 0.0)


def _require(v, allowed, what: str):
    """Support containment check run before any measurement."""
    if not np.any(v > 0):
        raise RegionOutOfRangeError(f"{what} has no lattice nodes on this grid")
    if np.any((v > 0) & ~allowed):
        raise PreconditionError(f"{what} leaves its stated region")


def _reflect(v: np.ndarray) -> np.ndarray:
    """v(-xi, -tau) on the node lattice (index 0 has no mirror)."""
    out = np.zeros_like(v)
    out[1:, 1:, 1:] = v[:0:-1, :0:-1, :0:-1]
    return out


def _tau_cell(g: FrequencyGrid) -> np.ndarray:
    sel = np.zeros(g.n_tau, bool)
    sel[g.n_tau // 2] = True
    return sel


def _box2d(g: FrequencyGrid, cx, cy, side) -> np.ndarray:
    L = max(1, int(round(side / g.d_xi)))
    k0 = int(round((cx + g.xi_max) / g.d_xi - (L - 1) / 2))
    l0 = int(round((cy + g.xi_max) / g.d_xi - (L - 1) / 2))
    if k0 < 0 or l0 < 0 or k0 + L > g.n_xi or l0 + L > g.n_xi:
        raise RegionOutOfRangeError("box leaves the xi square")
    p = np.zeros((g.n_xi, g.n_xi), bool)
    p[k0:k0 + L, l0:l0 + L] = True
    return p


def _pair_geometry(i, k):
    """Centres of two boxes on |xi| = 1.5 2^i whose sum is (1.5 2^k - 1, 0)."""
    q = 1.5 * 2.0**k - 1.0
    r = 1.5 * 2.0**i
    if q / 2 >= r:
        raise PreconditionError("output annulus unreachable from the input boxes")
    v = math.sqrt(r * r - q * q / 4)
    return q, v, 2.0 ** (k - 1)


def _annulus_area(k: int) -> float:
    return math.pi * ((2.0 ** (k + 1) - 1) ** 2 - (2.0**k - 1) ** 2)


def _shell_length(d: int) -> float:
    """Length of {m : 2^d <= <m> < 2^{d+1}}."""
    return 2.0 ** (d + 1)


_LOG_SHELL = 2.0 * math.log(2.0)  # integral of <m>^{-1} over one modulation shell


def _origin(g):
    return g.n_xi // 2, g.n_xi // 2, g.n_tau // 2


def _small_region(out, mask, g, xi_area, tau_measure, norm: str):
    """Norm of ``out`` on a region near the origin.

    The lattice sum is used when the lattice covers the region's measure to
    within a factor 2; otherwise the region sits inside the origin cell and
    the origin value is multiplied by the exact measure of the region.
    ``tau_measure`` is the tau length (L2xi_L1tau) or the integral of the
    squared tau weight (L2 type norms).
    """
    n_xi = int(np.count_nonzero(mask.any(axis=2)))
    cells = int(np.count_nonzero(mask))
    lattice_xi = n_xi * g.d_xi**2
    lattice_vol = cells * g.cell_volume
    exact_vol = xi_area * (tau_measure if norm == "L2" else 1.0)
    ok = n_xi > 0 and 0.5 <= lattice_xi / xi_area <= 2.0
    if norm == "L2":
        ok = ok and 0.5 <= lattice_vol / exact_vol <= 2.0
    if ok:
        v = np.where(mask, out, 0.0)
        return (_l2(v, g) if norm == "L2" else _l2l1(v, g)), "lattice"
    val = float(out[_origin(g)])
    if norm == "L2":
        return val * math.sqrt(xi_area * tau_measure), "point"
    return val * tau_measure * math.sqrt(xi_area), "point"


def _power_ratio(f: np.ndarray, mult: np.ndarray, g: FrequencyGrid, gmask=None, iters: int = 3):
    """Largest ||mult (f * x)|| / ||x|| over x >= 0 (supported on gmask),
    estimated by power iteration on the normal operator."""
    Fg = GridFunction(g, f, check=False, copy=False)
    Fr = GridFunction(g, _reflect(f), check=False, copy=False)
    x = convolve(Fr, GridFunction(g, mult, check=False, copy=False), max_crop=None).values
    if gmask is not None:
        x = np.where(gmask, x, 0.0)
    if not np.any(x > 0):
        raise RegionOutOfRangeError("no admissible input reaches the output region")
    ratio, hist = 0.0, []
    for _ in range(iters):
        x = x / x.max()
        y = mult * convolve(Fg, GridFunction(g, x, check=False, copy=False), max_crop=None).values
        ratio = _l2(y, g) / _l2(x, g)
        hist.append(ratio)
        x = convolve(Fr, GridFunction(g, mult * y, check=False, copy=False), max_crop=None).values
        if gmask is not None:
            x = np.where(gmask, x, 0.0)
    return ratio, hist


# ---------------------------------------------------------------------------
# builders: (point, grid, rng) -> (lhs, rhs, extra)
# ---------------------------------------------------------------------------


def _inv_mod(p, g, rng):
    mask = _slab_mask(g, p["k"], p["d"])
    if not mask.any():
        raise RegionOutOfRangeError("A_k cap B_d has no nodes")
    v = np.where(mask, 1.0 / bracket(g.modulation), 0.0)
    return _l2(v, g), 1.0, {"nodes": int(mask.sum())}


def _l22(p, g, rng):
    f = _block(np.ones(g.shape, bool), rng)
    h = _block(np.ones(g.shape, bool), rng)
    F, H = GridFunction(g, f, check=False), GridFunction(g, h, check=False)
    # inputs fill the grid, so mass leaves it; output nodes are still exact
    c = convolve(F, H, max_crop=None).values
    mask = _slab_mask(g, p["k"], p["d"]) & ~_k_mask(g)
    if not mask.any():
        raise RegionOutOfRangeError("output region has no nodes")
    lhs = _l2(np.where(mask, c / bracket(g.modulation), 0.0), g)
    return lhs, _l2(f, g) * _l2(h, g), {}


def _l21(p, g, rng):
    k, n, d = p["k"], p["n"], p["d"]
    gm = (g.xi_abs <= 2.0 ** (k + 1))[:, :, None] & (g.m_index == n)[None, None, :]
    gv = _block(gm, rng)
    h = _slab_mask(g, k, d)
    if not h.any() or not gm.any():
        raise RegionOutOfRangeError("L21 blocks are empty on this grid")
    G = GridFunction(g, gv, check=False)
    # f = (reflected g) * chi_{A_k cap B_d}, the dual extremizer
    f = convolve(GridFunction(g, _reflect(gv), check=False), GridFunction(g, h.astype(float)),
                 max_crop=None)
    F = convolve(f, G, max_crop=None).values
    lhs = _l2l1(np.where(h, F, 0.0), g)
    return lhs, _l2(f.values, g) * _l2(gv, g), {}


def _profile(g, mask, rng):
    return _block(mask, rng)


def _ge(p, g, rng):
    i, j = p["i"], p["j"]
    a = ParabolaMeasure(g, "P", 0.0, _profile(g, _annulus(g, i), rng), i)
    b = ParabolaMeasure(g, "P", 0.0, _profile(g, _annulus(g, j), rng), j)
    m = measure_convolve(a, b, refine=2).values
    return _l2(m, g), a.l2() * b.l2(), {"refine": 2}


@lru_cache(maxsize=4)
def _ge2_conv(g: FrequencyGrid, i: int, j: int, refine: int):
    a = annulus_measure(g, i)
    b = annulus_measure(g, j)
    # mass above tau_max lies outside the measured region
    return measure_convolve(a, b, refine=refine, max_crop=None).values, a.l2() * b.l2()


def _ge2(p, g, rng):
    i, j, d = p["i"], p["j"], 2.0 ** p["log2d"]
    if rng is None:
        m, rhs = _ge2_conv(g, i, j, 2)
    else:
        a = ParabolaMeasure(g, "P", 0.0, _profile(g, _annulus(g, i), rng), i)
        b = ParabolaMeasure(g, "P", 0.0, _profile(g, _annulus(g, j), rng), j)
        m, rhs = measure_convolve(a, b, refine=2, max_crop=None).values, a.l2() * b.l2()
    size = np.sqrt(np.abs(g.tau_axis)[None, None, :] + g.xi_sq[:, :, None])
    region = (size >= 2.0 ** (j - 1)) & (size < 2.0 ** (j + 1)) & (np.abs(g.modulation) <= d)
    return _l2(np.where(region, m, 0.0), g), rhs, {"d": d}


def _c2(p, g, rng):
    i, j, k = p["i"], p["j"], p["k"]
    if i != j:
        raise PreconditionError("the C2 builder places both boxes on one annulus (i == j)")
    q, v, s = _pair_geometry(i, k)
    pa = _box2d(g, q / 2, v, s) & _annulus(g, i)
    pb = _box2d(g, q / 2, -v, s) & _annulus(g, j)
    a = ParabolaMeasure(g, "P", 0.0, _profile(g, pa, rng), i)
    b = ParabolaMeasure(g, "P", 0.0, _profile(g, pb, rng), j)
    m = measure_convolve(a, b, refine=3).values
    m = np.where(_annulus(g, k)[:, :, None], m, 0.0)
    return _l2l1(m, g), a.l2() * b.l2(), {"box_nodes": round(s / g.d_xi, 3)}


def _slabs(p, g, rng, names=("i", "d1"), other=("j", "d2")):
    f = _block(_slab_mask(g, p[names[0]], p[names[1]]), rng)
    h = _block(_slab_mask(g, p[other[0]], p[other[1]]), rng)
    _require(f, _slab_mask(g, p[names[0]], p[names[1]]), "f")
    _require(h, _slab_mask(g, p[other[0]], p[other[1]]), "g")
    return f, h


def _b2(p, g, rng):
    f, h = _slabs(p, g, rng)
    c = convolve(GridFunction(g, f, check=False), GridFunction(g, h, check=False)).values
    m = _slab_mask(g, p["k"], p["d3"])
    lhs = _xsb(np.where(m, c, 0.0), g, -0.5)
    return lhs, _xsb(f, g, 0.5) * _xsb(h, g, 0.5), {}


def _b10(p, g, rng):
    f, h = _slabs(p, g, rng)
    c = convolve(GridFunction(g, f, check=False), GridFunction(g, h, check=False)).values
    return _l2(c, g), _xsb(f, g, 0.5) * _xsb(h, g, 0.5), {}


def _b11(p, g, rng):
    i, j, k = p["i"], p["j"], p["k"]
    if i != j:
        raise PreconditionError("the B11 builder places both boxes on one annulus (i == j)")
    q, v, s = _pair_geometry(i, k)
    ma = _box2d(g, q / 2, v, s)[:, :, None] & _slab_mask(g, i, p["d1"])
    mb = _box2d(g, q / 2, -v, s)[:, :, None] & _slab_mask(g, j, p["d2"])
    f, h = _block(ma, rng), _block(mb, rng)
    _require(f, _slab_mask(g, i, p["d1"]), "f")
    _require(h, _slab_mask(g, j, p["d2"]), "g")
    c = convolve(GridFunction(g, f, check=False), GridFunction(g, h, check=False)).values
    lhs = _l2l1(np.where(_annulus(g, k)[:, :, None], c, 0.0), g)
    return lhs, _xsb(f, g, 0.5) * _xsb(h, g, 0.5), {"box_nodes": round(s / g.d_xi, 3)}


def _b20(p, g, rng):
    i, k = p["i"], p["k"]
    fm = _slab_mask(g, i, p["d1"])
    f = _block(fm, rng)
    _require(f, fm, "f")
    mult = np.where(_slab_mask(g, k, p["d3"]), bracket(g.modulation) ** -0.5, 0.0)
    ratio, hist = _power_ratio(f, mult, g)
    return ratio, _xsb(f, g, 0.5), {"power_iterates": [round(h, 12) for h in hist]}


def _b21(p, g, rng):
    fm = _slab_mask(g, p["i"], p["d1"])
    f = _block(fm, rng)
    _require(f, fm, "f")
    gmask = (g.d_index == p["d2"]) & ~_k_mask(g)
    if not gmask.any():
        raise RegionOutOfRangeError(
            f"K^c cap B_{p['d2']} has no lattice nodes (d_tau = {g.d_tau:g})")
    mult = np.where(_slab_mask(g, p["k"], p["d3"]), bracket(g.modulation) ** -0.5, 0.0)
    ratio, hist = _power_ratio(f, mult, g, gmask=gmask)
    return ratio, _xsb(f, g, 0.5), {"g_nodes": int(gmask.sum())}


def _weighted_dual(f: np.ndarray, g: FrequencyGrid, norm: str, jmask=None) -> np.ndarray:
    """Input maximizing the origin value of f * (x / w) at unit norm of x."""
    lw = log2_weight(g.tau_axis)[None, None, :]
    c = _reflect(f) * np.exp2(-lw)
    if jmask is not None:
        c = np.where(jmask[:, :, None], c, 0.0)
    if norm == "L2":
        return c
    # L2xi_L1tau: spend each column's mass at its best tau node
    best = c.argmax(axis=2)
    out = np.zeros_like(c)
    k1, k2 = np.indices(best.shape)
    out[k1, k2, best] = c[k1, k2, best]
    return out


def _b22(p, g, rng):
    i, k, d3 = p["i"], p["k"], p["d3"]
    fm = _slab_mask(g, i, p["d1"])
    f = _block(fm, rng)
    _require(f, fm, "f")
    x = _weighted_dual(f, g, "L2")
    out = weighted_convolve(GridFunction(g, f, check=False), GridFunction(g, x, check=False),
                            0, -1, 0, max_crop=None).values
    mult = bracket(g.modulation) ** -0.5
    lhs, rule = _small_region(out * mult, _slab_mask(g, k, d3), g, _annulus_area(k), _LOG_SHELL, "L2")
    return lhs, _xsb(f, g, 0.5) * _l2(x, g), {"quadrature": rule}


def _b30(p, g, rng):
    cell = _tau_cell(g)
    f = _block(_annulus(g, p["i"])[:, :, None] & cell, rng)
    h = _block(_annulus(g, p["j"])[:, :, None] & cell, rng)
    c = convolve(GridFunction(g, f, check=False), GridFunction(g, h, check=False)).values
    return _l2l1(c, g), _l2l1(f, g) * _l2l1(h, g), {}


def _b31(p, g, rng):
    i, j, k = p["i"], p["j"], p["k"]
    if i != j:
        raise PreconditionError("the B31 builder places both boxes on one annulus (i == j)")
    q, v, s = _pair_geometry(i, k)
    cell = _tau_cell(g)
    f = _block((_box2d(g, q / 2, v, s) & _annulus(g, i))[:, :, None] & cell, rng)
    h = _block((_box2d(g, q / 2, -v, s) & _annulus(g, j))[:, :, None] & cell, rng)
    c = convolve(GridFunction(g, f, check=False), GridFunction(g, h, check=False)).values
    lhs = _l2l1(np.where(_annulus(g, k)[:, :, None], c, 0.0), g)
    return lhs, _l2l1(f, g) * _l2l1(h, g), {"box_nodes": round(s / g.d_xi, 3)}


def _b32(p, g, rng):
    i, j, k, d = p["i"], p["j"], p["k"], p["d"]
    fm = _annulus(g, i)[:, :, None] & _k_mask(g)
    f = _block(fm, rng)
    _require(f, fm, "f")
    x = _weighted_dual(f, g, "L2xi_L1tau", jmask=_annulus(g, j))
    _require(x, np.broadcast_to(_annulus(g, j)[:, :, None], g.shape), "g")
    out = weighted_convolve(GridFunction(g, f, check=False), GridFunction(g, x, check=False),
                            0, -1, 0, max_crop=None).values
    lhs, rule = _small_region(out, _slab_mask(g, k, d), g, _annulus_area(k), _shell_length(d),
                              "L2xi_L1tau")
    return lhs, _l2l1(f, g) * _l2l1(x, g), {"quadrature": rule}


def _b40(p, g, rng):
    f = _block(_annulus(g, p["i"])[:, :, None] & _tau_cell(g), rng)
    near = g.d_index <= 2 * p["j"]
    h = _block(_annulus(g, p["j"])[:, :, None] & near, rng)
    c = convolve(GridFunction(g, f, check=False), GridFunction(g, h, check=False)).values
    return _l2(c, g), _l2l1(f, g) * _l2(h, g), {}


def _b42(p, g, rng):
    i, d = p["i"], p["d"]
    fm = _annulus(g, i)[:, :, None] & _k_mask(g)
    f = _block(fm, rng)
    _require(f, fm, "f")
    x = _weighted_dual(f, g, "L2")
    out = weighted_convolve(GridFunction(g, f, check=False), GridFunction(g, x, check=False),
                            0, -1, 0, max_crop=None).values
    region = (g.d_index == d) & ~_k_mask(g)
    jtop = math.ceil((d + 4) / 2) - 1  # K^c cap B_d lies in A_0..A_jtop
    area = math.pi * (2.0 ** (jtop + 1) - 1) ** 2
    lhs, rule = _small_region(out, region, g, area, _shell_length(d), "L2")
    return lhs, _l2l1(f, g) * _l2(x, g), {"quadrature": rule}


# ---------------------------------------------------------------------------
# grid rules: point -> (xi_max, tau_max)
# ---------------------------------------------------------------------------


def _rule_inv_mod(p):
    X = 2.0 ** (p["k"] + 1)
    return X, X * X + 4 + 2.0 ** (p["d"] + 2)


def _rule_l22(p):
    k, d = p["k"], p["d"]
    X = 2.0 ** (k + 2)
    return X, max(X * X + 4, 4 * (2.0 ** (2 * k + 2) + 2.0 ** (d + 1)))


def _rule_l21(p):
    k, n, d = p["k"], p["n"], p["d"]
    X = 2.0 ** (k + 2)
    return X, max(X * X + 4, 1.25 * (2.0 ** (2 * k + 2) + 2.0 ** (d + 1) + 2.0 ** (n + 2)))


def _rule_ge(p):
    X = 2.0 ** (max(p["i"], p["j"]) + 2)
    return X, 2 * X * X + 4


def _rule_ge2(p):
    X = 2.0 ** (p["j"] + 1)
    return X, X * X + 4


def _rule_c2(p):
    X = 2.0 ** (max(p["i"], p["j"]) + 1)
    return X, 2 * X * X + 4


def _rule_slab(p, extra=0, tf=1.25):
    top = max(p["i"], p.get("j", p["i"]), p.get("k", 0))
    X = 2.0 ** (top + 1 + extra)
    return X, max(X * X + 4, tf * 2.0 ** (2 * top + 2 + 2 * extra))


def _rule_b2(p):
    return _rule_slab(p, 0)


def _rule_b10(p):
    t = max(p["i"], p["j"])
    X = 2.0 ** (t + 2)
    return X, max(X * X + 4, 2.5 * 2.0 ** (2 * t + 2))


def _rule_b11(p):
    X = 2.0 ** (p["i"] + 1)
    return X, max(X * X + 4, 2.5 * 2.0 ** (2 * p["i"] + 2))


def _rule_b20(p):
    t = max(p["i"], p["k"])
    X = 2.0 ** (t + 2)
    return X, max(X * X + 4, 1.25 * 2.0 ** (2 * t + 3))


def _rule_b21(p):
    X = 2.0 ** (max(p["i"], p["k"]) + 2)
    return X, max(X * X + 4, 2.5 * 2.0 ** (2 * p["i"] + 2))


def _rule_high(p):
    top = max(p["i"], p.get("j", p["i"]))
    X = 2.0 ** (top + 1)
    return X, max(X * X + 4, 1.25 * 2.0 ** (2 * top + 2))


def _rule_marginal(p):
    X = 2.0 ** (max(p["i"], p["j"]) + 2)
    return X, X * X + 4


def _rule_b31(p):
    X = 2.0 ** (p["i"] + 1)
    return X, X * X + 4


# ---------------------------------------------------------------------------
# bounds (log2 of the stated factor) for domination specs
# ---------------------------------------------------------------------------


def _bound_b22(p):
    return -4.0 * p["i"]


def _bound_b32(p):
    return p["k"] - 20.0 * p["j"]


def _bound_b42(p):
    return p["d"] / 2 - 20.0 * p["i"]


# ---------------------------------------------------------------------------
# table
# ---------------------------------------------------------------------------


def _pts(**fixed):
    """Points varying one key: ``_pts(k=2, d=range(0, 7))``."""
    var = [k for k, v in fixed.items() if not isinstance(v, (int, float))]
    (key,) = var
    return tuple({**{k: v for k, v in fixed.items() if k != key}, key: x} for x in fixed[key])


def _diag(ts, fn):
    return tuple({"t": t, **fn(t)} for t in ts)


def builtin_lemmas() -> list:
    """The 17 estimates, 14 with sharp scaling and 3 checked as domination."""
    specs = [
        LemmaSpec(
            "INV_MOD", "||chi_{A_k cap B_d} / <tau-|xi|^2>||_L2 <= 2^{-d/2+k}",
            {"d": -0.5, "k": 1.0},
            (Sweep("d", "d", _pts(k=2, d=range(0, 7))), Sweep("k", "k", _pts(d=3, k=range(1, 5)))),
            _inv_mod, _rule_inv_mod,
        ),
        LemmaSpec(
            "L22", "||(1-chi_K) (f*g)_{k,d} / <tau-|xi|^2>||_L2 <~ 2^{-d} 2^{k+d/2} ||f|| ||g||",
            {"d": -0.5, "k": 1.0},
            (Sweep("d", "d", _pts(k=2, d=range(1, 8))), Sweep("k", "k", _pts(d=8, k=range(1, 6)))),
            _l22, _rule_l22,
        ),
        LemmaSpec(
            "L21", "||(f * chi_{C_n} g)_{k,d}||_{L2L1} <~ 2^{k+(n+d)/2} ||f|| ||chi_{C_n} g||",
            {"k": 1.0, "n": 0.5, "d": 0.5},
            (Sweep("n", "n", _pts(k=2, d=11, n=range(4, 9))),
             Sweep("d", "d", _pts(k=2, n=4, d=range(7, 12))),
             Sweep("k", "k", _pts(n=6, d=11, k=range(1, 5)))),
            _l21, _rule_l21,
        ),
        LemmaSpec(
            "GE", "||f dP * g dP||_L2 <= 2^{min(i,j)} ||f||_{L2(P)} ||g||_{L2(P)}",
            {"min_ij": 1.0},
            (Sweep("min(i,j)", "min_ij", _diag(range(1, 5), lambda t: {"i": t, "j": t, "min_ij": t})),),
            _ge, _rule_ge, constraints=("min_ij == min(i, j)",),
        ),
        LemmaSpec(
            "GE2", "||f dP * g dP||_{L2(|(xi,tau)| ~ 2^j, |tau-|xi|^2| <= d)} <~ d^{1/2} ||f|| ||g||",
            {"log2d": 0.5},
            (Sweep("log2(d)", "log2d", _pts(i=2, j=3, c1=0, c2=0, log2d=range(1, 6))),),
            _ge2, _rule_ge2,
            constraints=("i <= j", "abs(c1) <= 2**(2*i-3)", "abs(c2) <= 2**(2*j-3)"),
        ),
        LemmaSpec(
            "C2", "||f dP * g dP||_{L2L1(|xi| ~ 2^k)} <~ 2^{k+(i+j)/2} ||f|| ||g||",
            {"k": 1.0, "i": 0.5, "j": 0.5},
            (Sweep("k", "k", _pts(i=5, j=5, k=range(2, 6))),
             Sweep("i=j", "t", _diag(range(3, 7), lambda t: {"i": t, "j": t, "k": t - 1}))),
            _c2, _rule_c2,
        ),
        LemmaSpec(
            "B2", "||(f_{i,d1} * g_{j,d2})_{k,d3}||_{X^{0,-1/2}} <~ 2^{-(i+j)/2} ||f|| ||g||",
            {"i": -0.5, "j": -0.5},
            (Sweep("i=j", "t", _diag(range(3, 7), lambda t: {
                "i": t, "j": t, "k": t + 1, "d1": 2 * t - 4, "d2": 2 * t - 4, "d3": 2 * t - 4})),),
            _b2, _rule_b2,
            constraints=("0 <= i <= j", "d1 <= 2*i-4", "d2 <= 2*j-4", "abs(k-j) <= 5",
                         "d3 <= 2*k-4"),
        ),
        LemmaSpec(
            "B10", "||f_{i,d1} * g_{j,d2}||_L2 <= ||f||_{X^{0,1/2}} ||g||_{X^{0,1/2}}",
            {"i": 0.0},
            (Sweep("i=j", "t", _diag(range(3, 7), lambda t: {
                "i": t, "j": t, "d1": 2 * t - 4, "d2": 2 * t - 4})),),
            _b10, _rule_b10,
            constraints=("abs(i-j) <= 2", "d1 <= 2*i-4", "d2 <= 2*j-4"),
        ),
        LemmaSpec(
            "B11", "||(f_{i,d1} * g_{j,d2})_k||_{L2L1} <~ 2^k ||f||_{X^{0,1/2}} ||g||_{X^{0,1/2}}",
            {"k": 1.0},
            (Sweep("i=j", "t", _diag(range(3, 8), lambda t: {
                "i": t, "j": t, "k": t - 1, "d1": 2 * t - 4, "d2": 2 * t - 4})),),
            _b11, _rule_b11,
            constraints=("abs(i-j) <= 2", "k <= j+2", "d1 <= 2*i-4", "d2 <= 2*j-4"),
        ),
        LemmaSpec(
            "B20", "||(f_{i,d1} * g)_{k,d3}||_{X^{0,-1/2}} <~ 2^{(i-k)/2} ||f||_{X^{0,1/2}} ||g||_L2",
            {"i": 0.5, "k": -0.5},
            (Sweep("i=k", "t", _diag(range(3, 7), lambda t: {
                "i": t, "k": t, "d1": 2 * t - 4, "d3": 2 * t - 4})),),
            _b20, _rule_b20,
            constraints=("k >= i-10", "d3 <= 2*k-4", "d1 <= 2*i-4"),
        ),
        LemmaSpec(
            "B21", "||(f_{i,d1} * g^{K^c}_{d2})_{k,d3}||_{X^{0,-1/2}} <~ 2^{(3d2-2i-2d3)/4} ||f|| ||g||",
            {"d2": 0.75, "i": -0.5, "d3": -0.5},
            (Sweep("d2", "d2", _pts(i=7, k=7, d1=10, d3=10, d2=range(1, 5))),
             Sweep("d3", "d3", _pts(i=7, k=7, d1=10, d2=4, d3=range(7, 11))),
             Sweep("i", "i", tuple({"i": i, "k": i, "d1": 2 * i - 4, "d2": 4, "d3": 10}
                                   for i in range(7, 11)))),
            _b21, _rule_b21,
            constraints=("d2 <= 2*i-10", "d3 <= 2*k-4", "d1 <= 2*i-4"),
        ),
        LemmaSpec(
            "B22", "||(f_{i,d1} * g/w)_{k,d3}||_{X^{0,-1/2}} <~ 2^{-4i} ||f||_{X^{0,1/2}} ||g||_L2",
            {"i": -4.0},
            (Sweep("i", "i", tuple({"i": i, "k": 2, "d1": 2 * i - 4, "d3": 0} for i in range(12, 16))),),
            _b22, _rule_high, kind="domination", bound=_bound_b22,
            constraints=("k <= i-10", "d3 <= 2*k-4", "d1 <= 2*i-4"),
        ),
        LemmaSpec(
            "B30", "||f_i * g_j||_{L2L1} <~ 2^{min(i,j)} ||f_i||_{L2L1} ||g_j||_{L2L1}",
            {"min_ij": 1.0},
            (Sweep("min(i,j)", "min_ij", _diag(range(1, 5), lambda t: {"i": t, "j": t, "min_ij": t})),),
            _b30, _rule_marginal, constraints=("min_ij == min(i, j)",),
        ),
        LemmaSpec(
            "B31", "||(f_i * g_j)_k||_{L2L1} <~ 2^k ||f_i||_{L2L1} ||g_j||_{L2L1}",
            {"k": 1.0},
            (Sweep("i=j", "t", _diag(range(3, 8), lambda t: {"i": t, "j": t, "k": t - 1})),),
            _b31, _rule_b31,
        ),
        LemmaSpec(
            "B32", "||(f^K_i * g_j/w)_{k,d}||_{L2L1} <~ 2^k 2^{-20j} ||f_i||_{L2L1} ||g_j||_{L2L1}",
            {"k": 1.0, "j": -20.0},
            (Sweep("i=j", "t", _diag(range(3, 7), lambda t: {"i": t, "j": t, "k": 0, "d": 0})),),
            _b32, _rule_high, kind="domination", bound=_bound_b32,
            constraints=("abs(i-j) <= 3", "max(i, j) <= 6", "k >= 0", "d >= 0"),
            notes="k <= max(i,j)-10 and d <= 2max(i,j)-10 cannot hold for i, j <= 6; "
                  "k and d are clamped to the lowest shell 0",
        ),
        LemmaSpec(
            "B40", "||f_i * g_j||_L2 <~ 2^{min(i,j)} ||f_i||_{L2L1} ||g_j||_L2",
            {"min_ij": 1.0},
            (Sweep("min(i,j)", "min_ij", _diag(range(1, 5), lambda t: {"i": t, "j": t, "min_ij": t})),),
            _b40, _rule_marginal, constraints=("min_ij == min(i, j)",),
        ),
        LemmaSpec(
            "B42", "||(1-chi_K)(f^K_i * g/w)_d||_L2 <= 2^{d/2} 2^{-20i} ||f_i||_{L2L1} ||g||_L2",
            {"d": 0.5, "i": -20.0},
            (Sweep("i", "i", _pts(d=0, i=range(10, 14))),),
            _b42, _rule_high, kind="domination", bound=_bound_b42,
            constraints=("d <= 2*i-20",),
        ),
    ]
    return [s.validate() for s in specs]


def get_lemma(name: str) -> LemmaSpec:
    for s in builtin_lemmas():
        if s.name.upper() == name.upper():
            return s
    raise KeyError(f"unknown lemma {name!r}")


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def _measure(spec: LemmaSpec, sweep_label: str, point: dict, shape, grid, seed, profile, pos):
    spec.check_point(point)
    if grid is None:
        X, T = spec.grid_rule(point)
        g = build_grid(shape[0], shape[1], X, T)
    else:
        g = grid
    rng = None
    if profile == "random":
        rng = np.random.default_rng([0 if seed is None else int(seed), *pos])
    try:
        lhs, rhs, extra = spec.builder(point, g, rng)
    except RegionOutOfRangeError as exc:
        return Sample(sweep_label, dict(point), math.nan, math.nan, math.nan,
                      {"unresolved": str(exc), "grid": g.describe()})
    with np.errstate(divide="ignore"):
        value = math.log2(lhs / rhs) if lhs > 0 else -math.inf
    if spec.kind == "domination":
        value -= spec.bound(point)
    extra = dict(extra)
    extra["grid"] = g.describe()
    return Sample(sweep_label, dict(point), float(lhs), float(rhs), float(value), extra)


def _measure_star(args):
    return _measure(*args)


def run_lemma(spec: LemmaSpec | str, grid: FrequencyGrid | None = None, *, adapt: bool = True,
              workers: int = 1, seed: int | None = None, profile: str = "constant") -> SlopeFit:
    """Evaluate every sweep of ``spec`` and fit (or bound) the log-ratios.

    ``grid`` fixes the node counts (default 64^2 x 1024).  With ``adapt``
    the extents follow each sample's indices; otherwise every sample uses
    ``grid`` as given.  Samples whose regions have no lattice nodes are kept
    in the table as unresolved and make their sweep fail.
    """
    if isinstance(spec, str):
        spec = get_lemma(spec)
    if profile not in ("constant", "random"):
        raise ValueError("profile must be 'constant' or 'random'")
    shape = DEFAULT_SHAPE if grid is None else (grid.n_xi, grid.n_tau)
    fixed = None if (grid is None or adapt) else grid
    jobs = []
    for a, sw in enumerate(spec.sweeps):
        for b, p in enumerate(sw.points):
            jobs.append((spec, sw.label, p, shape, fixed, seed, profile, (a, b)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            samples = list(ex.map(_measure_star, jobs))
    else:
        samples = [_measure_star(j) for j in jobs]
    regressors = {sw.label: sw.regressor for sw in spec.sweeps}
    for smp in samples:
        smp.extra["x"] = float(smp.point[regressors[smp.sweep]])
    entries = []
    for sw in spec.sweeps:
        rows = [s for s in samples if s.sweep == sw.label]
        entries.append(_entry(spec, sw, rows))
    return SlopeFit(spec.name, spec.kind, entries, samples, spec.notes)


def _entry(spec: LemmaSpec, sw: Sweep, rows: list) -> FitEntry:
    n = len(rows)
    if spec.kind == "domination":
        vals = [s.value for s in rows]
        worst = max(vals) if vals and not any(math.isnan(v) for v in vals) else math.nan
        return FitEntry(f"{sw.label}:log2(lhs/rhs)", 0.0, worst, math.nan, n,
                        spec.tolerance, "domination")
    pred = spec.predicted_slope(sw)
    good = [s for s in rows if math.isfinite(s.value)]
    if len(good) < 4:
        return FitEntry(sw.label, pred, math.nan, math.nan, n, spec.tolerance)
    fit = fit_slope([((s.point[sw.regressor],), s.value) for s in good], [sw.regressor])
    e = fit.entries[0]
    return FitEntry(sw.label, pred, e.fitted, e.residual, n, spec.tolerance,
                    intercept=e.intercept)


def run_all(names=None, *, workers: int = 1, seed: int | None = None,
            profile: str = "constant") -> list:
    specs = builtin_lemmas() if names is None else [get_lemma(n) for n in names]
    return [run_lemma(s, workers=workers, seed=seed, profile=profile) for s in specs]


def fits_to_csv(fits) -> str:
    out = [",".join(CSV_COLUMNS) + "\n"]
    for f in fits:
        out.append(f.to_csv(header=False))
    return "".join(out)
