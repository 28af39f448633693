"""Surface measures on the parabolas P_c = {tau = |xi|^2 + c} and
Pbar_c = {tau = -|xi|^2 + c}, stored as a profile over the xi lattice.

The measure ``f dP_c`` carries the density sqrt(1 + 4|xi|^2) d xi.  Its
convolution with another such measure is an L^2 function of (xi, tau) in two
space dimensions, which :func:`measure_convolve` samples on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, RegionOutOfRangeError, SupportOverflowError
from .grid import FrequencyGrid, GridFunction

__all__ = [
    "ParabolaMeasure",
    "surface_density",
    "parabola_restrict",
    "measure_convolve",
    "thin_slab",
    "annulus_measure",
]

ORIENTATIONS = ("P", "Pbar")


def surface_density(xi_sq):
    """sqrt(1 + 4|xi|^2)."""
    return np.sqrt(1.0 + 4.0 * np.asarray(xi_sq, dtype=float))


@dataclass(frozen=True, eq=False)
class ParabolaMeasure:
    """profile(xi) dP_c on the xi lattice of ``grid``."""

    grid: FrequencyGrid
    orientation: str
    c: float
    profile: np.ndarray
    j: int | None = None

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        p = np.asarray(self.profile, dtype=float)
        if p.shape != (self.grid.n_xi, self.grid.n_xi):
            raise ValueError("profile must live on the xi lattice")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("profile must be finite and nonnegative")
        if self.j is not None and np.any(p[self.grid.j_index != self.j] > 0):
            raise PreconditionError(f"profile is not supported on A_{self.j}")
        object.__setattr__(self, "profile", p)

    def tau_of(self, xi_sq) -> np.ndarray:
        sign = 1.0 if self.orientation == "P" else -1.0
        return sign * np.asarray(xi_sq) + self.c

    def l2(self) -> float:
        """||f||_{L^2(P_c)}."""
        g = self.grid
        w = surface_density(g.xi_sq)
        return float(np.sqrt(np.sum(self.profile**2 * w) * g.d_xi**2))

    def total_mass(self) -> float:
        g = self.grid
        return float(np.sum(self.profile * surface_density(g.xi_sq)) * g.d_xi**2)


def _tau_slot(grid: FrequencyGrid, tau) -> np.ndarray:
    return (np.asarray(tau) + grid.tau_max) / grid.d_tau


def parabola_restrict(f: GridFunction, c: float, orientation: str = "P",
                      j: int | None = None) -> ParabolaMeasure:
    """Sample f at (xi, +-|xi|^2 + c), nearest node in tau.

    The slice must stay inside the grid on every xi node of the annulus
    ``A_j`` (or of the inscribed disc |xi| < xi_max when j is None).
    """
    g = f.grid
    m = ParabolaMeasure(g, orientation, c, np.zeros((g.n_xi, g.n_xi)))
    region = (g.j_index == j) if j is not None else (g.xi_abs < g.xi_max)
    slot = np.rint(_tau_slot(g, m.tau_of(g.xi_sq))).astype(np.int64)
    inside = (slot >= 0) & (slot < g.n_tau)
    if not region.any() or np.any(region & ~inside):
        raise RegionOutOfRangeError(f"parabola slice {orientation}_{c} exits the grid")
    prof = np.zeros((g.n_xi, g.n_xi))
    k1, k2 = np.nonzero(region)
    prof[k1, k2] = f.values[k1, k2, slot[k1, k2]]
    return ParabolaMeasure(g, orientation, c, prof, j)


def annulus_measure(grid: FrequencyGrid, j: int, orientation: str = "P", c: float = 0.0,
                    value: float = 1.0) -> ParabolaMeasure:
    """Constant profile on A_j."""
    prof = np.where(grid.j_index == j, value, 0.0)
    if not prof.any():
        raise RegionOutOfRangeError(f"annulus A_{j} is empty on this grid")
    return ParabolaMeasure(grid, orientation, c, prof, j)


def thin_slab(m: ParabolaMeasure) -> GridFunction:
    """Grid function one tau cell thick whose tau integral is profile * density."""
    g = m.grid
    slot = np.rint(_tau_slot(g, m.tau_of(g.xi_sq))).astype(np.int64)
    v = np.zeros(g.shape)
    k1, k2 = np.nonzero(m.profile > 0)
    s = slot[k1, k2]
    if np.any((s < 0) | (s >= g.n_tau)):
        raise RegionOutOfRangeError("slab leaves the tau range")
    v[k1, k2, s] = m.profile[k1, k2] * surface_density(g.xi_sq[k1, k2]) / g.d_tau
    return GridFunction(g, v, check=False, copy=False)


def _sub_points(m: ParabolaMeasure, refine: int):
    """Sample points of the profile, each lattice cell split into refine^2
    sub-cells on which the profile is constant."""
    g = m.grid
    k1, k2 = np.nonzero(m.profile > 0)
    off = ((np.arange(refine) + 0.5) / refine - 0.5) * g.d_xi
    o1, o2 = np.meshgrid(off, off, indexing="ij")
    x1 = (g.xi_axis[k1][:, None] + o1.ravel()[None, :]).ravel()
    x2 = (g.xi_axis[k2][:, None] + o2.ravel()[None, :]).ravel()
    val = np.repeat(m.profile[k1, k2], refine * refine)
    sq = x1 * x1 + x2 * x2
    h2 = (g.d_xi / refine) ** 2
    return x1, x2, val * surface_density(sq) * h2, m.tau_of(sq)


def measure_convolve(a: ParabolaMeasure, b: ParabolaMeasure, *, binning: str = "nearest",
                     refine: int = 1, max_crop: float | None = 1e-6,
                     chunk: int = 1 << 21) -> GridFunction:
    """Cell averages of the density of (a dP^1) * (b dP^2).

    Every pair of sample points carries mass a b rho_1 rho_2 h^4 (h the
    sample spacing) and is assigned to the output node nearest
    (xi_1 + xi_2, tau_1 + tau_2); the mass is then divided by the cell volume.
    ``binning='linear'`` splits each pair between the two neighbouring tau
    nodes instead.  With ``refine=1`` the samples are the lattice nodes, which
    reproduces the grid convolution of one-cell-thick slabs; larger
    ``refine`` approximates the continuum measures, whose convolution the
    lattice cannot resolve once d_tau is below the spacing of the attainable
    values of |xi_1|^2 + |xi_2|^2.
    """
    if a.grid != b.grid:
        raise PreconditionError("measures live on different grids")
    if binning not in ("nearest", "linear"):
        raise ValueError("binning must be 'nearest' or 'linear'")
    if refine < 1:
        raise ValueError("refine must be a positive integer")
    g = a.grid
    n, nt = g.n_xi, g.n_tau
    ax1, ax2, aw, at = _sub_points(a, refine)
    bx1, bx2, bw, bt = _sub_points(b, refine)
    out = np.zeros(n * n * nt)
    total = float(aw.sum() * bw.sum())
    if total == 0:
        return GridFunction.zeros(g)
    kept = 0.0
    step = max(1, chunk // max(1, len(bx1)))
    for s in range(0, len(ax1), step):
        sl = slice(s, s + step)
        o1 = np.floor((ax1[sl, None] + bx1[None, :] + g.xi_max) / g.d_xi + 0.5).astype(np.int64).ravel()
        o2 = np.floor((ax2[sl, None] + bx2[None, :] + g.xi_max) / g.d_xi + 0.5).astype(np.int64).ravel()
        w = (aw[sl, None] * bw[None, :]).ravel()
        pos = _tau_slot(g, at[sl, None] + bt[None, :]).ravel()
        okx = (o1 >= 0) & (o1 < n) & (o2 >= 0) & (o2 < n)
        if binning == "nearest":
            parts = [(np.floor(pos + 0.5).astype(np.int64), w)]
        else:
            lo = np.floor(pos)
            frac = pos - lo
            lo = lo.astype(np.int64)
            parts = [(lo, w * (1.0 - frac)), (lo + 1, w * frac)]
        for t, ww in parts:
            ok = okx & (t >= 0) & (t < nt)
            idx = (o1[ok] * n + o2[ok]) * nt + t[ok]
            out += np.bincount(idx, weights=ww[ok], minlength=out.size)
            kept += float(ww[ok].sum())
    crop = max(0.0, 1.0 - kept / total)
    if max_crop is not None and crop > max_crop:
        raise SupportOverflowError(f"measure convolution cropped {crop:.3g} of its mass")
    out /= g.cell_volume
    return GridFunction(g, out.reshape(g.shape), check=False, copy=False)
