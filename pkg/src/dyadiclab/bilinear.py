"""Space-time convolution, the Duhamel multiplier and the weighted bilinear map.

Grid nodes sit at ``-X + k h`` with the origin a node, so a full linear
convolution index ``K`` corresponds to grid index ``K - n/2`` on every axis.
Convolutions are computed with ``scipy.signal.fftconvolve`` on the bounding
boxes of the inputs and scaled by the cell volume.

Weighted products such as ``w (f/w * g/w)`` are evaluated band by band in the
weight: each input is split into octaves of ``max(1, -tau)``, inside which
the weight varies by less than ``2^10``.  This keeps every FFT operand within
a modest dynamic range even though ``w`` itself reaches ``1e30`` on desk
grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import PreconditionError, SupportOverflowError
from .grid import FrequencyGrid, GridFunction, bracket
from .norms import NormBreakdown, SpaceSpec, log2_weight, space_norm

__all__ = [
    "ConvolutionInfo",
    "convolve",
    "weighted_convolve",
    "duhamel_apply",
    "bilinear_map",
    "domination_excess",
    "RatioResult",
    "estimate_ratio",
]

DEFAULT_MAX_CROP = 1e-6
_NOISE = 1e-13


@dataclass
class ConvolutionInfo:
    total_mass: float = 0.0
    kept_mass: float = 0.0
    n_pieces: int = 0

    @property
    def cropped_fraction(self) -> float:
        if self.total_mass <= 0:
            return 0.0
        return max(0.0, 1.0 - self.kept_mass / self.total_mass)


def _same_grid(f: GridFunction, g: GridFunction) -> FrequencyGrid:
    if f.grid != g.grid:
        raise PreconditionError("convolution operands live on different grids")
    return f.grid


def _bbox(v: np.ndarray):
    nz = v > 0
    if not nz.any():
        return None
    out = []
    for ax in range(3):
        other = tuple(a for a in range(3) if a != ax)
        hit = np.flatnonzero(nz.any(axis=other))
        out.append((int(hit[0]), int(hit[-1]) + 1))
    return out


def _direct(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(tuple(x + y - 1 for x, y in zip(a.shape, b.shape)))
    for idx in zip(*np.nonzero(a)):
        sl = tuple(slice(i, i + n) for i, n in zip(idx, b.shape))
        out[sl] += a[idx] * b
    return out


def _raw_piece(a: np.ndarray, b: np.ndarray, grid: FrequencyGrid, out: np.ndarray,
               info: ConvolutionInfo, method: str, scale: np.ndarray | None = None):
    """Accumulate (a * b) into ``out`` (grid-shaped), optionally times ``scale``
    on output tau nodes.  Returns nothing; updates ``info``."""
    ba, bb = _bbox(a), _bbox(b)
    if ba is None or bb is None:
        return
    ca = a[tuple(slice(*r) for r in ba)]
    cb = b[tuple(slice(*r) for r in bb)]
    full = fftconvolve(ca, cb) if method == "fft" else _direct(ca, cb)
    peak = float(full.max()) if full.size else 0.0
    if peak <= 0:
        return
    full[full < _NOISE * peak] = 0.0
    total = float(ca.sum() * cb.sum())
    info.total_mass += total
    info.n_pieces += 1
    half = (grid.n_xi // 2, grid.n_xi // 2, grid.n_tau // 2)
    src, dst = [], []
    for ax in range(3):
        start = ba[ax][0] + bb[ax][0] - half[ax]
        n = full.shape[ax]
        lo = max(0, -start)
        hi = min(n, grid.shape[ax] - start)
        if hi <= lo:
            return
        src.append(slice(lo, hi))
        dst.append(slice(start + lo, start + hi))
    kept = full[tuple(src)]
    # mass accounting uses the unscaled piece, normalized to the exact total
    info.kept_mass += total * float(kept.sum()) / float(full.sum())
    if scale is not None:
        kept = kept * scale[dst[2]][None, None, :]
    out[tuple(dst)] += kept


def _finish(out: np.ndarray, grid: FrequencyGrid, info: ConvolutionInfo, max_crop):
    np.maximum(out, 0.0, out=out)
    out *= grid.cell_volume
    if max_crop is not None and info.cropped_fraction > max_crop:
        raise SupportOverflowError(
            f"convolution cropped {info.cropped_fraction:.3g} of its mass "
            f"(threshold {max_crop:g}); enlarge the grid"
        )


def convolve(f: GridFunction, g: GridFunction, *, max_crop: float | None = DEFAULT_MAX_CROP,
             method: str = "fft", return_info: bool = False):
    """Linear space-time convolution f * g restricted to the grid.

    ``max_crop`` is the largest tolerated fraction of the convolution's mass
    that falls outside the grid (``None`` disables the check).  ``method`` is
    ``"fft"`` or ``"direct"`` (support-sparse summation, for small inputs).
    """
    grid = _same_grid(f, g)
    if method not in ("fft", "direct"):
        raise ValueError("method must be 'fft' or 'direct'")
    out = np.zeros(grid.shape)
    info = ConvolutionInfo()
    _raw_piece(f.values, g.values, grid, out, info, method)
    _finish(out, grid, info, max_crop)
    res = GridFunction(grid, out, check=False, copy=False)
    return (res, info) if return_info else res


def _bands(grid: FrequencyGrid) -> np.ndarray:
    """Octave label of max(1, -tau) for each tau node."""
    t = np.maximum(1.0, -grid.tau_axis)
    return np.floor(np.log2(t)).astype(np.int64)


def weighted_convolve(f: GridFunction, g: GridFunction, pf: int, pg: int, pout: int, *,
                      max_crop: float | None = DEFAULT_MAX_CROP, return_info: bool = False):
    """w^pout ((w^pf f) * (w^pg g)) evaluated octave by octave in the weight."""
    grid = _same_grid(f, g)
    lw = log2_weight(grid.tau_axis)
    band = _bands(grid)
    out = np.zeros(grid.shape)
    info = ConvolutionInfo()
    labels = np.unique(band)

    def split(v, p):
        parts = []
        for a in labels:
            sel = band == a
            if not np.any(v[:, :, sel] > 0):
                continue
            piece = np.zeros_like(v)
            ref = 10.0 * a
            piece[:, :, sel] = v[:, :, sel] * np.exp2(p * (lw[sel] - ref))
            parts.append((ref, piece))
        return parts

    fp, gp = split(f.values, pf), split(g.values, pg)
    for ra, a in fp:
        for rb, b in gp:
            scale = np.exp2(pout * lw + pf * ra + pg * rb)
            _raw_piece(a, b, grid, out, info, "fft", scale)
    _finish(out, grid, info, max_crop)
    res = GridFunction(grid, out, check=False, copy=False)
    return (res, info) if return_info else res


def duhamel_apply(h: GridFunction) -> GridFunction:
    """Multiply by 1 / <tau - |xi|^2> at every node."""
    return GridFunction(h.grid, h.values / bracket(h.grid.modulation), check=False, copy=False)


def bilinear_map(f: GridFunction, g: GridFunction, *, max_crop: float | None = DEFAULT_MAX_CROP,
                 return_info: bool = False):
    """B(f, g) = w <tau - |xi|^2>^{-1} ((f/w) * (g/w))."""
    conv, info = weighted_convolve(f, g, -1, -1, 1, max_crop=max_crop, return_info=True)
    res = duhamel_apply(conv)
    return (res, info) if return_info else res


def domination_excess(f: GridFunction, g: GridFunction, constant: float = 2.0**10, *,
                      rtol: float = 1e-9, max_crop: float | None = DEFAULT_MAX_CROP) -> dict:
    """Check B(f, g) <= constant * duhamel(f * g) node by node.

    A node counts as a violation when the excess exceeds ``rtol`` times the
    larger side plus the floating point floor of the FFT, taken as 1e-12 of
    the peak of the right-hand side.
    """
    lhs = bilinear_map(f, g, max_crop=max_crop).values
    rhs = constant * duhamel_apply(convolve(f, g, max_crop=max_crop)).values
    floor = 1e-12 * float(rhs.max()) if rhs.size else 0.0
    excess = lhs - rhs
    bad = excess > rtol * np.maximum(lhs, rhs) + floor
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > floor, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
    return {
        "violations": int(np.count_nonzero(bad)),
        "max_ratio": float(ratio.max()) if ratio.size else 0.0,
        "constant": constant,
    }


@dataclass
class RatioResult:
    ratio: float
    s: float
    numerator: NormBreakdown
    norm_f: float
    norm_g: float
    cropped_fraction: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "s": self.s,
            "numerator": self.numerator.to_dict(),
            "norm_f": self.norm_f,
            "norm_g": self.norm_g,
            "cropped_fraction": self.cropped_fraction,
        }


def estimate_ratio(f: GridFunction, g: GridFunction, s: float, *,
                   max_crop: float | None = DEFAULT_MAX_CROP) -> RatioResult:
    """||B(f,g)||_Z / (||f||_Z ||g||_Z) with the Z^s surrogate throughout."""
    spec = SpaceSpec("Zs_surrogate", s)
    nf = space_norm(f, spec, warn_boundary=False).total
    ng = space_norm(g, spec, warn_boundary=False).total
    if nf == 0 or ng == 0:
        raise ZeroDivisionError("estimate_ratio needs inputs with nonzero norm")
    out, info = bilinear_map(f, g, max_crop=max_crop, return_info=True)
    num = space_norm(out, spec, warn_boundary=False)
    r = num.total / (nf * ng)
    if not math.isfinite(r):
        raise FloatingPointError("ratio is not finite")
    return RatioResult(r, s, num, nf, ng, info.cropped_fraction)
