"""Desk-scale solver for i u_t - Delta u = u^2 on a periodic box.

The flow is split into the linear part, which multiplies each Fourier mode
by exp(i |xi|^2 t), and the pointwise Riccati flow u' = -i u^2, whose exact
solution is u0 / (1 + i t u0).  Fourier coefficients use the numpy FFT order
and are normalized as ``fft2(u) / N^2`` so that ||u||_{L^2(box)}^2 equals
``L^2 * sum |u_hat|^2``.

:func:`picard_iterate` runs the fixed point on the frequency grid instead,
with nonnegative majorants: iterates are ``L + B(v, v)`` where ``L`` is a
one-cell slab on the parabola carrying |u0_hat| and ``B`` is the weighted
bilinear map.  It is a demonstrator of the contraction mechanism only; the
time cutoffs of a full fixed-point scheme are not modelled.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .bilinear import bilinear_map
from .errors import BlowupStepError, DivergenceError, PreconditionError
from .grid import FrequencyGrid, GridFunction, bracket
from .norms import SpaceSpec, space_norm

__all__ = [
    "PeriodicBox",
    "Trajectory",
    "linear_propagate",
    "nonlinear_flow",
    "splitstep_solve",
    "self_convergence",
    "rough_data",
    "PicardResult",
    "picard_iterate",
    "linear_surrogate",
    "LipschitzTable",
    "continuity_probe",
]

POLE_TOL = 1e-6


@dataclass(frozen=True)
class PeriodicBox:
    """[0, length)^2 sampled on n x n points."""

    n: int = 64
    length: float = 2 * math.pi

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def xi(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @property
    def xi_sq(self) -> np.ndarray:
        k = self.xi
        return k[:, None] ** 2 + k[None, :] ** 2

    def coords(self):
        x = self.dx * np.arange(self.n)
        return np.meshgrid(x, x, indexing="ij")

    def fft(self, u) -> np.ndarray:
        return np.fft.fft2(u) / self.n**2

    def ifft(self, u_hat) -> np.ndarray:
        return np.fft.ifft2(u_hat) * self.n**2

    def l2(self, u) -> float:
        return self.hs(u, 0.0)

    def hs(self, u, s: float) -> float:
        """||u||_{H^s} with weight <xi> = 1 + |xi|."""
        c = self.fft(u)
        w = bracket(np.sqrt(self.xi_sq)) ** (2 * s)
        return float(self.length * np.sqrt(np.sum(w * np.abs(c) ** 2)))


def _xi_sq(space) -> np.ndarray:
    if isinstance(space, FrequencyGrid):
        return space.xi_sq
    return space.xi_sq


def linear_propagate(u0_hat, t: float, space=None) -> np.ndarray:
    """exp(i |xi|^2 t) u0_hat.

    ``space`` is a :class:`PeriodicBox` (FFT order, the default box of the
    array's size) or a :class:`FrequencyGrid` (centred xi lattice).
    """
    u0_hat = np.asarray(u0_hat)
    if space is None:
        space = PeriodicBox(u0_hat.shape[0])
    q = _xi_sq(space)
    if q.shape != u0_hat.shape:
        raise PreconditionError("spectrum shape does not match the xi lattice")
    return np.exp(1j * q * t) * u0_hat


def nonlinear_flow(u, t: float) -> np.ndarray:
    """Exact solution of u' = -i u^2 after time t."""
    den = 1.0 + 1j * t * u
    if np.any(np.abs(den) < POLE_TOL):
        raise BlowupStepError(f"nonlinear flow hits its pole within a step of length {t:g}")
    return u / den


@dataclass
class Trajectory:
    box: PeriodicBox
    times: np.ndarray
    snapshots: list

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    def norms(self, s: float = 0.0) -> np.ndarray:
        return np.array([self.box.hs(u, s) for u in self.snapshots])

    def to_csv(self, s: float = 0.0) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "l2", "hs", "s"])
        for t, u in zip(self.times, self.snapshots):
            w.writerow([f"{t:.9f}", f"{self.box.l2(u):.12e}", f"{self.box.hs(u, s):.12e}", f"{s:g}"])
        return buf.getvalue()


def _steps(T: float, dt: float) -> int:
    if not (0 < T <= 1.0):
        raise PreconditionError("horizon must satisfy 0 < T <= 1")
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise PreconditionError(f"dt={dt:g} does not divide T={T:g}")
    return int(n)


def splitstep_solve(u0, T: float, dt: float, box: PeriodicBox | None = None, *,
                    nonlinear: bool = True, save_every: int = 1) -> Trajectory:
    """Strang splitting N(dt/2) L(dt) N(dt/2) up to time T."""
    u = np.array(u0, dtype=complex)
    box = PeriodicBox(u.shape[0]) if box is None else box
    if u.shape != (box.n, box.n):
        raise PreconditionError("initial field does not match the box")
    n = _steps(T, dt)
    phase = np.exp(1j * box.xi_sq * dt)
    times, snaps = [0.0], [u.copy()]
    for k in range(1, n + 1):
        if nonlinear:
            u = nonlinear_flow(u, dt / 2)
        u = box.ifft(phase * box.fft(u))
        if nonlinear:
            u = nonlinear_flow(u, dt / 2)
        if k % save_every == 0 or k == n:
            times.append(k * dt)
            snaps.append(u.copy())
    return Trajectory(box, np.array(times), snaps)


def self_convergence(u0, T: float, dt: float, box: PeriodicBox | None = None) -> dict:
    """Observed order from runs at dt and dt/2, both compared with dt/8."""
    save = 10**9
    ref = splitstep_solve(u0, T, dt / 8, box, save_every=save).final
    a = splitstep_solve(u0, T, dt, box, save_every=save).final
    b = splitstep_solve(u0, T, dt / 2, box, save_every=save).final
    bx = PeriodicBox(np.asarray(u0).shape[0]) if box is None else box
    ea, eb = bx.l2(a - ref), bx.l2(b - ref)
    return {"error_dt": ea, "error_half": eb, "ratio": ea / eb, "order": math.log2(ea / eb)}


def rough_data(box: PeriodicBox, s: float, norm: float = 1.0, seed: int = 0) -> np.ndarray:
    """Random field with coefficients <xi>^(-s-1) times complex unit noise,
    scaled to H^s norm ``norm``."""
    rng = np.random.default_rng(seed)
    noise = (rng.standard_normal((box.n, box.n)) + 1j * rng.standard_normal((box.n, box.n))) / math.sqrt(2)
    c = bracket(np.sqrt(box.xi_sq)) ** (-s - 1) * noise
    u = box.ifft(c)
    return u * (norm / box.hs(u, s))


# ---------------------------------------------------------------------------
# Picard iteration on the frequency grid
# ---------------------------------------------------------------------------


def linear_surrogate(u0_hat, grid: FrequencyGrid) -> GridFunction:
    """One-cell slab on tau = |xi|^2 whose tau integral is |u0_hat|."""
    a = np.abs(np.asarray(u0_hat))
    if a.shape != (grid.n_xi, grid.n_xi):
        raise PreconditionError("spectrum does not live on the grid's xi lattice")
    slot = np.rint((grid.xi_sq + grid.tau_max) / grid.d_tau).astype(np.int64)
    v = np.zeros(grid.shape)
    k1, k2 = np.nonzero(a > 0)
    sl = slot[k1, k2]
    ok = sl < grid.n_tau
    if not ok.all():
        raise PreconditionError("data reaches xi nodes whose parabola leaves the grid")
    v[k1, k2, sl] = a[k1, k2] / grid.d_tau
    return GridFunction(grid, v, check=False, copy=False)


@dataclass
class PicardResult:
    s: float
    norms: list
    diff_norms: list
    factors: list
    cropped: list = field(default_factory=list)

    @property
    def contraction(self) -> float:
        """Largest factor after the first iterate."""
        f = [x for x in self.factors[1:] if math.isfinite(x)]
        return max(f) if f else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "norm", "diff_norm", "factor"])
        for n, (a, b) in enumerate(zip(self.norms, self.diff_norms)):
            fac = self.factors[n - 1] if n >= 1 else float("nan")
            w.writerow([n + 1, f"{a:.9e}", f"{b:.9e}", f"{fac:.6f}"])
        return buf.getvalue()


def picard_iterate(u0_hat, s: float, n_iter: int, grid: FrequencyGrid, *,
                   growth_limit: float = 10.0) -> PicardResult:
    """Iterate v <- L + B(v, v) from v = 0 and measure W^s-surrogate norms.

    ``diff_norms[n]`` is the norm of v_{n+1} - v_n and ``factors[n]`` the
    ratio diff_norms[n+1] / diff_norms[n].  Mass that leaves the grid is
    dropped (projection onto the grid) and its fraction recorded.
    """
    if not (-1.0 < s < 0.0):
        raise PreconditionError("picard_iterate needs -1 < s < 0")
    if n_iter < 1:
        raise PreconditionError("n_iter must be positive")
    spec = SpaceSpec("Ws", s)
    norm = lambda f: space_norm(f, spec, warn_boundary=False).total
    lin = linear_surrogate(u0_hat, grid)
    v = GridFunction.zeros(grid)
    res = PicardResult(s, [], [], [])
    base = None
    for n in range(n_iter):
        if n == 0:
            new, crop = lin, 0.0
        else:
            b, info = bilinear_map(v, v, max_crop=None, return_info=True)
            new, crop = lin + b, info.cropped_fraction
        diff = np.maximum(new.values - v.values, 0.0)
        dn = norm(GridFunction(grid, diff, check=False, copy=False))
        nn = norm(new)
        res.norms.append(nn)
        res.diff_norms.append(dn)
        res.cropped.append(crop)
        if n >= 1:
            prev = res.diff_norms[-2]
            res.factors.append(dn / prev if prev > 0 else 0.0)
        if base is None:
            base = nn
        if base > 0 and nn > growth_limit * base:
            raise DivergenceError(
                f"iterate norm {nn:.3g} exceeds {growth_limit:g} times the initial {base:.3g}"
            )
        v = new
    return res


# ---------------------------------------------------------------------------
# continuity
# ---------------------------------------------------------------------------


@dataclass
class LipschitzTable:
    s: float
    sizes: list
    distances: list

    @property
    def ratios(self) -> list:
        return [d / e if e > 0 else 0.0 for d, e in zip(self.distances, self.sizes)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size", "distance", "ratio", "s"])
        for e, d, r in zip(self.sizes, self.distances, self.ratios):
            w.writerow([f"{e:.9e}", f"{d:.9e}", f"{r:.9e}", f"{self.s:g}"])
        return buf.getvalue()


def continuity_probe(u0, perturbation_sizes, s: float, *, T: float = 1.0, dt: float = 0.01,
                     box: PeriodicBox | None = None, direction=None, seed: int = 0) -> LipschitzTable:
    """sup_t ||u(t) - u_eps(t)||_{H^s} for data u0 + eps * direction.

    ``direction`` defaults to seeded rough data of unit H^s norm.
    """
    sizes = [float(e) for e in perturbation_sizes]
    if len(sizes) < 3 or any(b >= a for a, b in zip(sizes, sizes[1:])):
        raise PreconditionError("perturbation sizes must be decreasing with at least 3 values")
    u0 = np.asarray(u0, dtype=complex)
    box = PeriodicBox(u0.shape[0]) if box is None else box
    p = rough_data(box, s, 1.0, seed) if direction is None else np.asarray(direction, dtype=complex)
    base = splitstep_solve(u0, T, dt, box).snapshots
    dist = []
    for e in sizes:
        if e == 0:
            dist.append(0.0)
            continue
        pert = splitstep_solve(u0 + e * p, T, dt, box).snapshots
        dist.append(max(box.hs(a - b, s) for a, b in zip(base, pert)))
    return LipschitzTable(s, sizes, dist)
