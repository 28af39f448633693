"""Space-time frequency grids, nonnegative grid functions and quadrature.

A grid samples (xi_1, xi_2, tau) at the nodes

    xi_k  = -xi_max  + k * d_xi,    k = 0 .. n_xi - 1
    tau_l = -tau_max + l * d_tau,   l = 0 .. n_tau - 1

and every node stands for the cell of volume ``d_xi**2 * d_tau`` centred on
it.  Nodes include the origin, so sums of node coordinates are again nodes
and a discrete convolution needs no interpolation.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GridSizeError, ParabolaClippingError, RegionOutOfRangeError

__all__ = [
    "FrequencyGrid",
    "GridFunction",
    "build_grid",
    "synthesize",
    "mixed_norm",
    "Delta",
    "GaussianBump",
    "ParabolaSlab",
    "ReflectedSlab",
    "TauColumn",
    "OnMask",
    "RandomOnMask",
    "write_binary",
    "read_binary",
    "write_csv",
    "read_csv",
    "NORM_KINDS",
]

NORM_KINDS = ("L2", "L2xi_L1tau", "Linf")


def _is_pow2(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def bracket(a):
    """Japanese bracket 1 + |a|."""
    return 1.0 + np.abs(a)


def dyadic_index(x):
    """floor(log2(x)) for x >= 1, as int16."""
    return np.floor(np.log2(x)).astype(np.int16)


@dataclass(frozen=True)
class FrequencyGrid:
    n_xi: int
    n_tau: int
    xi_max: float
    tau_max: float

    def __post_init__(self):
        if not (_is_pow2(self.n_xi) and _is_pow2(self.n_tau)):
            raise GridSizeError(
                f"n_xi={self.n_xi} and n_tau={self.n_tau} must be powers of two"
            )
        if not (self.xi_max > 0 and self.tau_max > 0):
            raise GridSizeError("extents must be positive")
        if self.tau_max < self.xi_max**2 + 4:
            raise ParabolaClippingError(
                f"parabola clipping: tau_max={self.tau_max} < xi_max^2 + 4 = "
                f"{self.xi_max ** 2 + 4}"
            )

    # spacing -------------------------------------------------------------
    @property
    def d_xi(self) -> float:
        return 2.0 * self.xi_max / self.n_xi

    @property
    def d_tau(self) -> float:
        return 2.0 * self.tau_max / self.n_tau

    @property
    def cell_volume(self) -> float:
        return self.d_xi**2 * self.d_tau

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_xi, self.n_xi, self.n_tau)

    # coordinates ---------------------------------------------------------
    @cached_property
    def xi_axis(self) -> np.ndarray:
        return -self.xi_max + self.d_xi * np.arange(self.n_xi)

    @cached_property
    def tau_axis(self) -> np.ndarray:
        return -self.tau_max + self.d_tau * np.arange(self.n_tau)

    @cached_property
    def xi_sq(self) -> np.ndarray:
        x = self.xi_axis
        return x[:, None] ** 2 + x[None, :] ** 2

    @cached_property
    def xi_abs(self) -> np.ndarray:
        return np.sqrt(self.xi_sq)

    @cached_property
    def modulation(self) -> np.ndarray:
        """tau - |xi|^2 at every node, shape (n_xi, n_xi, n_tau)."""
        return self.tau_axis[None, None, :] - self.xi_sq[:, :, None]

    @cached_property
    def reflected_modulation(self) -> np.ndarray:
        """tau + |xi|^2 at every node."""
        return self.tau_axis[None, None, :] + self.xi_sq[:, :, None]

    @cached_property
    def j_index(self) -> np.ndarray:
        """Annulus index j of each xi node (2^j <= <xi> < 2^{j+1})."""
        return dyadic_index(bracket(self.xi_abs))

    @cached_property
    def d_index(self) -> np.ndarray:
        """Modulation shell index d of each node."""
        return dyadic_index(bracket(self.modulation))

    @cached_property
    def m_index(self) -> np.ndarray:
        """tau shell index m of each tau node."""
        return dyadic_index(bracket(self.tau_axis))

    @property
    def jmax(self) -> int:
        """Largest annulus index present on the grid."""
        return int(self.j_index.max())

    @property
    def j_full(self) -> int:
        """Largest annulus index lying entirely inside the xi square."""
        return int(np.floor(np.log2(self.xi_max - self.d_xi + 1.0))) - 1

    def node_index(self, xi: Sequence[float], tau: float) -> tuple[int, int, int]:
        """Nearest node to (xi, tau); raises if the point lies off the grid."""
        k1 = int(round((xi[0] + self.xi_max) / self.d_xi))
        k2 = int(round((xi[1] + self.xi_max) / self.d_xi))
        l = int(round((tau + self.tau_max) / self.d_tau))
        if not (0 <= k1 < self.n_xi and 0 <= k2 < self.n_xi and 0 <= l < self.n_tau):
            raise RegionOutOfRangeError(f"point {tuple(xi)}, {tau} is off the grid")
        return k1, k2, l

    def node(self, k1: int, k2: int, l: int) -> tuple[float, float, float]:
        return (self.xi_axis[k1], self.xi_axis[k2], self.tau_axis[l])

    def describe(self) -> dict:
        return {
            "n_xi": self.n_xi,
            "n_tau": self.n_tau,
            "xi_max": self.xi_max,
            "tau_max": self.tau_max,
            "d_xi": self.d_xi,
            "d_tau": self.d_tau,
        }


def build_grid(n_xi: int, n_tau: int, xi_max: float, tau_max: float) -> FrequencyGrid:
    """Validated constructor.

    >>> g = build_grid(16, 64, 4.0, 20.0)
    >>> g.d_xi, g.d_tau
    (0.5, 0.625)
    """
    return FrequencyGrid(int(n_xi), int(n_tau), float(xi_max), float(tau_max))


class GridFunction:
    """Nonnegative finite samples on a grid.  Values are read-only."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: FrequencyGrid, values, *, check: bool = True,
                 copy: bool = True):
        v = np.asarray(values, dtype=np.float64)
        if copy and v is values:
            v = v.copy()
        if v.shape != grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {grid.shape}")
        if check:
            if not np.all(np.isfinite(v)):
                raise ValueError("grid function values must be finite")
            if v.size and v.min() < 0:
                raise ValueError("grid function values must be nonnegative")
        if v.flags.writeable:
            v.flags.writeable = False
        self.grid = grid
        self.values = v

    @classmethod
    def zeros(cls, grid: FrequencyGrid) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape), check=False, copy=False)

    def scaled(self, c: float) -> "GridFunction":
        if c < 0:
            raise ValueError("scale must be nonnegative")
        return GridFunction(self.grid, self.values * c, check=False, copy=False)

    def restrict(self, mask) -> "GridFunction":
        bits = getattr(mask, "bits", mask)
        return GridFunction(self.grid, np.where(bits, self.values, 0.0), check=False, copy=False)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return GridFunction(self.grid, self.values + other.values, check=False, copy=False)

    def support(self) -> np.ndarray:
        return self.values > 0

    def nnz(self) -> int:
        return int(np.count_nonzero(self.values))

    def mass(self) -> float:
        """Integral of f (sum times cell volume)."""
        return float(self.values.sum() * self.grid.cell_volume)

    def bbox(self) -> tuple[slice, slice, slice] | None:
        """Tight index box around the support, or None if f = 0."""
        nz = self.values > 0
        if not nz.any():
            return None
        out = []
        for ax in range(3):
            other = tuple(a for a in range(3) if a != ax)
            hit = np.flatnonzero(nz.any(axis=other))
            out.append(slice(int(hit[0]), int(hit[-1]) + 1))
        return tuple(out)

    def __repr__(self):
        return f"GridFunction(grid={self.grid!r}, nnz={self.nnz()})"


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Delta:
    """Single cell at the node nearest (xi, tau)."""

    xi: tuple[float, float]
    tau: float
    value: float = 1.0

    def render(self, grid: FrequencyGrid) -> np.ndarray:
        v = np.zeros(grid.shape)
        v[grid.node_index(self.xi, self.tau)] = self.value
        return v


@dataclass(frozen=True)
class GaussianBump:
    """exp(-|xi-c|^2/(2 w_xi^2) - (tau-c_tau)^2/(2 w_tau^2)), cut at 8 widths."""

    center_xi: tuple[float, float]
    center_tau: float
    width_xi: float
    width_tau: float
    amplitude: float = 1.0
    cutoff: float = 8.0

    def render(self, grid: FrequencyGrid) -> np.ndarray:
        x = grid.xi_axis
        a = ((x - self.center_xi[0]) / self.width_xi) ** 2
        b = ((x - self.center_xi[1]) / self.width_xi) ** 2
        c = ((grid.tau_axis - self.center_tau) / self.width_tau) ** 2
        r2 = a[:, None, None] + b[None, :, None] + c[None, None, :]
        v = self.amplitude * np.exp(-0.5 * r2)
        v[r2 > self.cutoff**2] = 0.0
        return v


def _side_filter(m: np.ndarray, side: str) -> np.ndarray:
    if side == "both":
        return np.ones(m.shape, dtype=bool)
    if side == "upper":
        return m >= 0
    if side == "lower":
        return m < 0
    raise ValueError(f"side must be both, upper or lower, not {side!r}")


@dataclass(frozen=True)
class ParabolaSlab:
    """Constant on A_i intersected with B_d (or B_lo..B_hi when d_hi is given)."""

    i: int
    d: int = 0
    d_hi: int | None = None
    side: str = "both"
    value: float = 1.0

    def render(self, grid: FrequencyGrid) -> np.ndarray:
        hi = self.d if self.d_hi is None else self.d_hi
        jm = (grid.j_index == self.i)[:, :, None]
        dm = (grid.d_index >= self.d) & (grid.d_index <= hi)
        keep = jm & dm & _side_filter(grid.modulation, self.side)
        return np.where(keep, self.value, 0.0)


@dataclass(frozen=True)
class ReflectedSlab:
    """Constant on A_i intersected with 2^d <= <tau + |xi|^2> < 2^{d+1}."""

    i: int
    d: int = 0
    side: str = "both"
    value: float = 1.0

    def render(self, grid: FrequencyGrid) -> np.ndarray:
        r = grid.reflected_modulation
        jm = (grid.j_index == self.i)[:, :, None]
        dm = dyadic_index(bracket(r)) == self.d
        keep = jm & dm & _side_filter(r, self.side)
        return np.where(keep, self.value, 0.0)


@dataclass(frozen=True)
class TauColumn:
    """Constant on |xi| <= radius with tau in [tau_lo, tau_hi)."""

    radius: float
    tau_lo: float
    tau_hi: float
    value: float = 1.0

    def render(self, grid: FrequencyGrid) -> np.ndarray:
        xm = (grid.xi_abs <= self.radius)[:, :, None]
        t = grid.tau_axis
        tm = ((t >= self.tau_lo) & (t < self.tau_hi))[None, None, :]
        return np.where(xm & tm, self.value, 0.0)


@dataclass(frozen=True)
class OnMask:
    """Constant value on a boolean mask (a RegionMask or raw bits)."""

    mask: object
    value: float = 1.0

    def render(self, grid: FrequencyGrid) -> np.ndarray:
        bits = np.asarray(getattr(self.mask, "bits", self.mask), dtype=bool)
        return np.where(bits, self.value, 0.0)


@dataclass(frozen=True)
class RandomOnMask:
    """Seeded uniform(low, high) values on a mask."""

    mask: object
    seed: int = 0
    low: float = 0.0
    high: float = 1.0

    def render(self, grid: FrequencyGrid) -> np.ndarray:
        bits = np.asarray(getattr(self.mask, "bits", self.mask), dtype=bool)
        rng = np.random.default_rng(self.seed)
        vals = rng.uniform(self.low, self.high, size=int(bits.sum()))
        v = np.zeros(grid.shape)
        v[bits] = vals
        return v


def synthesize(grid: FrequencyGrid, shape) -> GridFunction:
    """Render a shape descriptor into a nonnegative grid function.

    Raises RegionOutOfRangeError when the requested support is empty on
    this grid.
    """
    v = np.asarray(shape.render(grid), dtype=np.float64)
    if not np.any(v > 0):
        raise RegionOutOfRangeError(f"{shape!r} has empty support on {grid!r}")
    return GridFunction(grid, v, copy=False)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def _mixed(v: np.ndarray, grid: FrequencyGrid, kind: str) -> float:
    if kind == "L2":
        return float(np.sqrt(np.sum(v * v) * grid.cell_volume))
    if kind == "L2xi_L1tau":
        col = v.sum(axis=2) * grid.d_tau
        return float(np.sqrt(np.sum(col * col) * grid.d_xi**2))
    if kind == "Linf":
        return float(v.max()) if v.size else 0.0
    raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")


def mixed_norm(f: GridFunction, kind: str = "L2") -> float:
    """Riemann-sum mixed Lebesgue norm: L2, L2xi_L1tau or Linf."""
    v = f.values
    peak = float(np.abs(v).max()) if v.size else 0.0
    if kind == "Linf" or peak == 0.0 or not np.isfinite(peak):
        return _mixed(v, f.grid, kind)
    # normalise first so squares neither underflow nor overflow
    return peak * _mixed(v / peak, f.grid, kind)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"DYLABGF1"
_HEADER = struct.Struct("<8sqqdd")


def write_binary(f: GridFunction, path) -> Path:
    """Header (magic, n_xi, n_tau as int64, xi_max, tau_max as float64),
    then row-major little-endian float64 values."""
    path = Path(path)
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.n_xi, g.n_tau, g.xi_max, g.tau_max))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def read_binary(path) -> GridFunction:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, n_xi, n_tau, xi_max, tau_max = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError("not a grid function file")
    grid = build_grid(n_xi, n_tau, xi_max, tau_max)
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return GridFunction(grid, vals.reshape(grid.shape).copy(), copy=False)


def write_csv(f: GridFunction, path=None, *, nonzero_only: bool = True) -> str:
    """CSV with a one-line grid header row then (k1, k2, l, xi1, xi2, tau, value)."""
    g = f.grid
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["#grid", g.n_xi, g.n_tau, repr(g.xi_max), repr(g.tau_max)])
    w.writerow(["k1", "k2", "l", "xi1", "xi2", "tau", "value"])
    idx = np.argwhere(f.values > 0) if nonzero_only else np.argwhere(np.ones(g.shape, bool))
    for k1, k2, l in idx:
        w.writerow([k1, k2, l, repr(g.xi_axis[k1]), repr(g.xi_axis[k2]),
                    repr(g.tau_axis[l]), repr(float(f.values[k1, k2, l]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(source) -> GridFunction:
    text = source if "\n" in str(source) else Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    head = rows[0]
    grid = build_grid(int(head[1]), int(head[2]), float(head[3]), float(head[4]))
    v = np.zeros(grid.shape)
    for r in rows[2:]:
        v[int(r[0]), int(r[1]), int(r[2])] = float(r[6])
    return GridFunction(grid, v, copy=False)
