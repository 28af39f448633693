"""Fourier-side function space norms.

Kinds
-----
``Xsb_direct``    || <xi>^s <tau-|xi|^2>^b f ||_{L2}
``Xsb_dyadic``    ( sum_{j,d} 2^{2sj} 2^{2bd} ||f_{j,d}||^2 )^{1/2}
``Xsb_besov``     ( sum_j 2^{2sj} ( sum_d 2^{bd} ||f_{j,d}|| )^2 )^{1/2}
``Ys``            || <xi>^s f ||_{L2xi L1tau} + || <(xi,tau)>^{s+1} f ||_{L2}
``Zs_surrogate``  Besov(f^K; s, 1/2) + Ys(f^{K^c})
``Ws``            Zs_surrogate(w f),  w = max(1, -tau)^10

Here <(xi,tau)> = 1 + (|tau| + |xi|^2)^{1/2}.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, WeightOverflowError
from .grid import FrequencyGrid, GridFunction, bracket

__all__ = [
    "SPACE_KINDS",
    "SpaceSpec",
    "NormBreakdown",
    "BoundaryWarning",
    "weight_w",
    "log2_weight",
    "weighted",
    "space_norm",
    "norm_value",
    "PastingReport",
    "pasting_check",
]

SPACE_KINDS = ("Xsb_direct", "Xsb_dyadic", "Xsb_besov", "Ys", "Zs_surrogate", "Ws")
_LOG2_MAX = 1023.0


class BoundaryWarning(UserWarning):
    """f has mass in an annulus that is cut by the edge of the grid."""


@dataclass(frozen=True)
class SpaceSpec:
    kind: str
    s: float = 0.0
    b: float = 0.5

    def __post_init__(self):
        if self.kind not in SPACE_KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.kind in ("Zs_surrogate", "Ws") and self.b != 0.5:
            raise ValueError(f"{self.kind} uses the Besov exponent b = 1/2")


@dataclass
class NormBreakdown:
    """Total plus per-annulus data.

    ``per_shell`` holds (j, norm of f_j in the space).  ``components`` holds
    the per-annulus pieces that rebuild ``total`` exactly through
    :meth:`recombine`; ``parts`` splits Zs-type norms into K and K^c.
    """

    kind: str
    s: float
    b: float
    total: float
    per_shell: list
    components: dict = field(default_factory=dict)
    parts: dict | None = None

    def recombine(self) -> float:
        c = self.components
        l2 = lambda vals: math.sqrt(math.fsum(v * v for _, v in vals))
        if self.kind in ("Xsb_direct", "Xsb_dyadic", "Xsb_besov"):
            return l2(c["shell"])
        if self.kind == "Ys":
            return l2(c["L2L1"]) + l2(c["L2"])
        return l2(c["K"]) + l2(c["Kc_L2L1"]) + l2(c["Kc_L2"])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "s": self.s,
            "b": self.b,
            "total": self.total,
            "per_shell": [[int(j), float(v)] for j, v in self.per_shell],
            "parts": None if self.parts is None else {k: float(v) for k, v in self.parts.items()},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# ---------------------------------------------------------------------------
# weight
# ---------------------------------------------------------------------------


def log2_weight(tau) -> np.ndarray:
    """log2 w = 10 log2 max(1, -tau)."""
    t = np.maximum(1.0, -np.asarray(tau, dtype=float))
    return 10.0 * np.log2(t)


def weight_w(xi, tau):
    """w(xi, tau) = max(1, -tau)^10 (independent of xi)."""
    out = np.maximum(1.0, -np.asarray(tau, dtype=float)) ** 10
    return float(out) if np.ndim(out) == 0 else out


def weighted(f: GridFunction, power: int = 1) -> np.ndarray:
    """Values of w^power f, with overflow signalled instead of returning inf."""
    lw = power * log2_weight(f.grid.tau_axis)[None, None, :]
    v = f.values
    with np.errstate(divide="ignore"):
        lv = np.log2(v)
    if power > 0 and np.any(lv + lw > _LOG2_MAX):
        raise WeightOverflowError("w*f exceeds the float64 range; shrink the tau support")
    return v * np.exp2(lw)


# ---------------------------------------------------------------------------
# per-annulus building blocks
# ---------------------------------------------------------------------------


def _labels(grid: FrequencyGrid):
    return grid.j_index, grid.d_index


def _jd_table(v: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    """T[j, d] = ||f_{j,d}||_{L2}."""
    jj, dd = _labels(grid)
    J = int(jj.max()) + 1
    D = int(dd.max()) + 1
    nz = v > 0
    jf = np.broadcast_to(jj[:, :, None], grid.shape)[nz].astype(np.int64)
    lab = jf * D + dd[nz]
    sq = np.bincount(lab, weights=v[nz] ** 2, minlength=J * D) * grid.cell_volume
    return np.sqrt(sq).reshape(J, D)


def _per_j(vals2d: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    """Sum of a (n_xi, n_xi) array over each annulus."""
    jj = grid.j_index
    return np.bincount(jj.ravel().astype(np.int64), weights=vals2d.ravel(),
                       minlength=int(jj.max()) + 1)


def _shell_list(arr: np.ndarray) -> list:
    return [(int(j), float(x)) for j, x in enumerate(arr) if x > 0]


def _ys_parts(v: np.ndarray, grid: FrequencyGrid, s: float):
    """Per-annulus norms of the two Y^s terms."""
    col = v.sum(axis=2) * grid.d_tau
    t1 = _per_j((bracket(grid.xi_abs) ** s * col) ** 2 * grid.d_xi**2, grid)
    par = 1.0 + np.sqrt(np.abs(grid.tau_axis)[None, None, :] + grid.xi_sq[:, :, None])
    t2 = _per_j(np.sum((par ** (s + 1) * v) ** 2, axis=2) * grid.cell_volume, grid)
    return np.sqrt(t1), np.sqrt(t2)


def _besov_parts(v: np.ndarray, grid: FrequencyGrid, s: float, b: float) -> np.ndarray:
    T = _jd_table(v, grid)
    J, D = T.shape
    wj = 2.0 ** (s * np.arange(J))
    wd = 2.0 ** (b * np.arange(D))
    return wj * (T @ wd)


def _check_boundary(v: np.ndarray, grid: FrequencyGrid):
    outer = grid.j_index > grid.j_full
    if outer.any() and np.any(v[outer] > 0):
        warnings.warn("support reaches an annulus cut by the grid edge", BoundaryWarning,
                      stacklevel=3)


def _l2(a) -> float:
    return math.sqrt(math.fsum(float(x) ** 2 for x in a))


def _breakdown(v: np.ndarray, grid: FrequencyGrid, spec: SpaceSpec) -> NormBreakdown:
    s, b, kind = spec.s, spec.b, spec.kind
    if kind == "Xsb_direct":
        mult = bracket(grid.xi_abs)[:, :, None] ** s * bracket(grid.modulation) ** b
        per = np.sqrt(_per_j(np.sum((mult * v) ** 2, axis=2) * grid.cell_volume, grid))
        sh = _shell_list(per)
        return NormBreakdown(kind, s, b, _l2(per), sh, {"shell": sh})
    if kind == "Xsb_dyadic":
        T = _jd_table(v, grid)
        J, D = T.shape
        W = 2.0 ** (2 * s * np.arange(J))[:, None] * 2.0 ** (2 * b * np.arange(D))[None, :]
        per = np.sqrt(np.sum(W * T**2, axis=1))
        sh = _shell_list(per)
        return NormBreakdown(kind, s, b, _l2(per), sh, {"shell": sh})
    if kind == "Xsb_besov":
        per = _besov_parts(v, grid, s, b)
        sh = _shell_list(per)
        return NormBreakdown(kind, s, b, _l2(per), sh, {"shell": sh})
    if kind == "Ys":
        a, c = _ys_parts(v, grid, s)
        n = max(len(a), len(c))
        sh = _shell_list(a + c)
        comp = {"L2L1": _shell_list(a), "L2": _shell_list(c)}
        return NormBreakdown(kind, s, b, _l2(a) + _l2(c), sh, comp,
                             {"L2L1": _l2(a), "L2": _l2(c)})
    # Zs_surrogate on v (Ws passes w*f here)
    kmask = grid.d_index <= (2 * grid.j_index.astype(np.int32) - 4)[:, :, None]
    vk = np.where(kmask, v, 0.0)
    vc = v - vk
    bk = _besov_parts(vk, grid, s, 0.5)
    a, c = _ys_parts(vc, grid, s)
    n = max(len(bk), len(a))
    pad = lambda x: np.pad(x, (0, n - len(x)))
    sh = _shell_list(pad(bk) + pad(a) + pad(c))
    comp = {"K": _shell_list(bk), "Kc_L2L1": _shell_list(a), "Kc_L2": _shell_list(c)}
    kpart = _l2(bk)
    cpart = _l2(a) + _l2(c)
    return NormBreakdown(kind, s, b, kpart + cpart, sh, comp, {"K": kpart, "Kc": cpart})


def space_norm(f: GridFunction, spec: SpaceSpec, *, warn_boundary: bool = True) -> NormBreakdown:
    """Evaluate the norm named by ``spec`` with its per-annulus breakdown."""
    grid = f.grid
    v = f.values
    if warn_boundary:
        _check_boundary(v, grid)
    if spec.kind == "Ws":
        wv = weighted(f)
        out = _breakdown(wv, grid, SpaceSpec("Zs_surrogate", spec.s, 0.5))
        out.kind = "Ws"
        return out
    return _breakdown(v, grid, spec)


def norm_value(f: GridFunction, kind: str, s: float = 0.0, b: float = 0.5, **kw) -> float:
    """Shorthand for space_norm(...).total."""
    return space_norm(f, SpaceSpec(kind, s, b), **kw).total


# ---------------------------------------------------------------------------
# pasting relations
# ---------------------------------------------------------------------------


@dataclass
class PastingReport:
    s: float
    zs: float
    ys: float
    besov: float
    ratio_outer: float | None
    ratio_inner: float | None
    outer_supported: bool
    inner_supported: bool
    in_K: bool
    in_Kc: bool
    offset: int
    clamped: bool


def pasting_check(f: GridFunction, s: float, offset: int = 100) -> PastingReport:
    """Ratios Ys/Zs_surrogate (f in B_{>=2j-offset}) and Besov/Zs_surrogate
    (f in B_{<=2j+offset}).  Lower shell indices are clamped at 0."""
    if not (-1.0 <= s < 0.0):
        raise PreconditionError("pasting check needs -1 <= s < 0")
    grid = f.grid
    jj = grid.j_index.astype(np.int32)[:, :, None]
    dd = grid.d_index
    nz = f.values > 0
    lo = 2 * jj - offset
    clamped = bool(np.any(lo[..., 0] < 0))
    lo = np.maximum(lo, 0)
    outer = not np.any(nz & (dd < lo))
    inner = not np.any(nz & (dd > 2 * jj + offset))
    if not (outer or inner):
        raise PreconditionError("support lies in neither half-region of the pasting lemma")
    kmask = dd <= 2 * jj - 4
    zs = norm_value(f, "Zs_surrogate", s, warn_boundary=False)
    ys = norm_value(f, "Ys", s, warn_boundary=False)
    bs = norm_value(f, "Xsb_besov", s, 0.5, warn_boundary=False)
    return PastingReport(
        s=s, zs=zs, ys=ys, besov=bs,
        ratio_outer=ys / zs if outer else None,
        ratio_inner=bs / zs if inner else None,
        outer_supported=outer, inner_supported=inner,
        in_K=not np.any(nz & ~kmask), in_Kc=not np.any(nz & kmask),
        offset=offset, clamped=clamped,
    )
