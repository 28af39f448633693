"""Dyadic regions A_j, B_d, C_m, the near-parabola zones K and K', and
the interaction case lists implied by the resonance identity

    tau - |xi|^2 = (tau_1 - |xi_1|^2) + (tau_2 - |xi_2|^2) - 2 xi_1 . xi_2.

Membership of a cell is decided at its node (cell centre).
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PreconditionError
from .grid import FrequencyGrid, GridFunction

__all__ = [
    "RegionMask",
    "RegionWarning",
    "region_mask",
    "modulation_band",
    "DyadicPiece",
    "dyadic_decompose",
    "resonance_witness",
    "CaseBounds",
    "CoverageReport",
    "case_coverage_check",
    "modulation_cases",
    "tau_cases",
    "tau_shell_bounds_hold",
    "mask_to_rle_csv",
    "mask_from_rle_csv",
]


class RegionWarning(UserWarning):
    """Issued when a requested region is empty on the grid."""


@dataclass(frozen=True, eq=False)
class RegionMask:
    grid: FrequencyGrid
    bits: np.ndarray
    descriptor: tuple = ("custom",)

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.grid, self.bits & other.bits,
                          ("intersection", self.descriptor, other.descriptor))

    def __or__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.grid, self.bits | other.bits,
                          ("union", self.descriptor, other.descriptor))

    def __invert__(self) -> "RegionMask":
        return RegionMask(self.grid, ~self.bits, ("complement", self.descriptor))

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def is_empty(self) -> bool:
        return not self.bits.any()

    def contains(self, f: GridFunction) -> bool:
        """True when supp f lies inside the mask."""
        return not np.any((f.values > 0) & ~self.bits)


def _full(grid: FrequencyGrid, bits2d_or_1d: np.ndarray) -> np.ndarray:
    return np.broadcast_to(bits2d_or_1d, grid.shape).copy()


def region_mask(grid: FrequencyGrid, kind: str, index: int | None = None) -> RegionMask:
    """Mask of A_j, B_d, C_m (index required), K or Kprime.

    ``B_le`` and ``B_ge`` give the unions B_{<=index} and B_{>=index}.
    """
    kind_n = kind.replace("'", "prime")
    if kind_n in ("A", "B", "C", "B_le", "B_ge"):
        if index is None:
            raise ValueError(f"region kind {kind} needs an index")
        if index < 0 and kind_n not in ("B_le", "B_ge"):
            raise ValueError("dyadic index must be nonnegative")
    if kind_n == "A":
        bits = _full(grid, (grid.j_index == index)[:, :, None])
    elif kind_n == "B":
        bits = grid.d_index == index
    elif kind_n == "B_le":
        bits = grid.d_index <= index
    elif kind_n == "B_ge":
        bits = grid.d_index >= index
    elif kind_n == "C":
        bits = _full(grid, (grid.m_index == index)[None, None, :])
    elif kind_n == "K":
        bits = grid.d_index <= (2 * grid.j_index.astype(np.int32) - 4)[:, :, None]
    elif kind_n == "Kprime":
        bits = grid.d_index <= (2 * grid.j_index.astype(np.int32) + 4)[:, :, None]
    else:
        raise ValueError(f"unknown region kind {kind!r}")
    mask = RegionMask(grid, np.ascontiguousarray(bits), (kind_n, index))
    if mask.is_empty():
        warnings.warn(f"region {kind}{'' if index is None else index} is empty on this grid",
                      RegionWarning, stacklevel=2)
    return mask


def modulation_band(grid: FrequencyGrid, lo: int, hi: int) -> RegionMask:
    """B_lo union ... union B_hi."""
    bits = (grid.d_index >= lo) & (grid.d_index <= hi)
    return RegionMask(grid, bits, ("B_band", lo, hi))


@dataclass(frozen=True)
class DyadicPiece:
    j: int
    d: int
    l2: float
    piece: GridFunction | None = None


def dyadic_decompose(f: GridFunction, depth: tuple[int, int] | None = None,
                     with_pieces: bool = False) -> list[DyadicPiece]:
    """Split f into f_{j,d} = chi_{A_j cap B_d} f.

    Returns the nonzero pieces sorted by (j, d) with their L2 norms.  When
    ``depth = (jmax, dmax)`` is given, mass beyond it is an error.
    """
    g = f.grid
    v = f.values
    jj = np.broadcast_to(g.j_index[:, :, None], g.shape)
    dd = g.d_index
    nz = v > 0
    if depth is not None:
        jmax, dmax = depth
        if np.any(nz & ((jj > jmax) | (dd > dmax))):
            raise PreconditionError(f"support extends beyond depth {depth}")
    J = int(jj.max()) + 1
    D = int(dd.max()) + 1
    lab = jj[nz].astype(np.int64) * D + dd[nz]
    w = np.bincount(lab, weights=v[nz] ** 2, minlength=J * D) * g.cell_volume
    out = []
    for lbl in np.flatnonzero(w > 0):
        j, d = divmod(int(lbl), D)
        piece = None
        if with_pieces:
            piece = GridFunction(g, np.where((jj == j) & (dd == d), v, 0.0),
                                 check=False, copy=False)
        out.append(DyadicPiece(j, d, float(np.sqrt(w[lbl])), piece))
    return out


# ---------------------------------------------------------------------------
# resonance identity and case lists
# ---------------------------------------------------------------------------


def _shell(x):
    return np.floor(np.log2(1.0 + np.abs(x))).astype(np.int64)


def resonance_witness(xi1, tau1, xi2, tau2) -> dict:
    """Dyadic bookkeeping of one interaction (xi1,tau1)+(xi2,tau2)."""
    xi1 = np.asarray(xi1, float)
    xi2 = np.asarray(xi2, float)
    m1 = tau1 - xi1 @ xi1
    m2 = tau2 - xi2 @ xi2
    xi = xi1 + xi2
    tau = tau1 + tau2
    m = tau - xi @ xi
    return {
        "xi": tuple(xi), "tau": float(tau),
        "m": float(m), "m1": float(m1), "m2": float(m2),
        "cross": float(-2.0 * xi1 @ xi2),
        "d": int(_shell(m)), "d1": int(_shell(m1)), "d2": int(_shell(m2)),
        "k": int(_shell(np.sqrt(xi @ xi))),
    }


def modulation_cases(d, d1, d2, strict: bool = True) -> np.ndarray:
    """Case label 1, 2, 3 of the modulation list (first match), 0 if none.

    (1) |d-d2| <= 5, d1 <= d+6; (2) |d-d1| <= 5, d2 <= d+6;
    (3) d1, d2 >= d+7, |d1-d2| <= 2.  With ``strict=False`` the third case
    reads d1, d2 >= d+6, which closes the gap at d1 = d2 = d+6.
    """
    d, d1, d2 = np.broadcast_arrays(*(np.asarray(x) for x in (d, d1, d2)))
    c1 = (np.abs(d - d2) <= 5) & (d1 <= d + 6)
    c2 = (np.abs(d - d1) <= 5) & (d2 <= d + 6)
    lo = d + 7 if strict else d + 6
    c3 = (d1 >= lo) & (d2 >= lo) & (np.abs(d1 - d2) <= 2)
    return np.where(c1, 1, np.where(c2, 2, np.where(c3, 3, 0)))


def tau_cases(d, m, n, strict: bool = True) -> np.ndarray:
    """Case label of the tau-shell list under |tau| ~ 2^d.

    (1) n <= d+5, |m-d| <= 5; (2) m <= d+5, |n-d| <= 5;
    (3) m, n > d+5, |m-n| <= 3.  With ``strict=False`` the third case
    reads m, n >= d+5, which closes the boundary gap at m, n in {d+5, d+6}.
    """
    d, m, n = np.broadcast_arrays(*(np.asarray(x) for x in (d, m, n)))
    c1 = (n <= d + 5) & (np.abs(m - d) <= 5)
    c2 = (m <= d + 5) & (np.abs(n - d) <= 5)
    lo = d + 6 if strict else d + 5
    c3 = (m >= lo) & (n >= lo) & (np.abs(m - n) <= 3)
    return np.where(c1, 1, np.where(c2, 2, np.where(c3, 3, 0)))


@dataclass(frozen=True)
class CaseBounds:
    """Sampling ranges for case_coverage_check.

    scenario "modulation": the low-high interaction with the low index at
    least 11 below the high one, both inputs away from the parabola (K^c)
    and the output near it (K).  scenario "tau": the output cell lies in
    A_k cap B_d with d >= 2k+4 and only the tau shells m, n of the inputs
    are tracked.
    """

    scenario: str = "modulation"
    k_range: tuple[int, int] = (11, 13)
    extra: int = 10
    strict: bool = True


@dataclass
class CoverageReport:
    scenario: str
    n_samples: int
    n_landed: int
    case_counts: dict
    n_violations: int
    violations: list = field(default_factory=list)
    landed: dict | None = None

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def _annulus_points(rng, idx, n):
    """Integer lattice points with <xi> in [2^idx, 2^{idx+1}) (with rejection)."""
    lo = 2.0 ** idx - 1.0
    hi = 2.0 ** (idx + 1) - 1.0
    r = np.sqrt(rng.uniform(lo**2, hi**2, size=n))
    th = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.rint(np.stack([r * np.cos(th), r * np.sin(th)], axis=-1))
    ok = _shell(np.hypot(pts[:, 0], pts[:, 1])) == idx
    return pts, ok


def _shell_values(rng, d):
    """Signed integers x with <x> in [2^d, 2^{d+1}), one per entry of d."""
    d = np.asarray(d, dtype=float)
    lo = 2.0 ** d - 1.0
    hi = 2.0 ** (d + 1) - 1.0
    mag = np.maximum(np.floor(rng.uniform(lo, hi)), lo)
    sgn = np.where(rng.random(d.shape) < 0.5, -1.0, 1.0)
    return sgn * mag


def case_coverage_check(bounds: CaseBounds = CaseBounds(), samples: int = 20000,
                        seed: int = 0, max_witnesses: int = 20,
                        keep_samples: bool = False) -> CoverageReport:
    """Sample lattice interactions and test the relevant case list.

    With ``keep_samples`` the dyadic indices of every landed sample are
    returned in ``report.landed``.
    """
    if samples > 10**6:
        raise PreconditionError("at most 10^6 sampled triples")
    rng = np.random.default_rng(seed)
    if bounds.scenario == "modulation":
        rep = _modulation_coverage(bounds, samples, rng, max_witnesses)
    elif bounds.scenario == "tau":
        rep = _tau_coverage(bounds, samples, rng, max_witnesses)
    else:
        raise ValueError(f"unknown scenario {bounds.scenario!r}")
    if not keep_samples:
        rep.landed = None
    return rep


def _modulation_coverage(b: CaseBounds, n, rng, max_w) -> CoverageReport:
    lo, hi = b.k_range
    if lo < 11:
        raise PreconditionError("modulation scenario needs the high annulus index >= 11")
    j = rng.integers(lo, hi + 1, size=n)
    i = np.floor(rng.random(n) * (j - 10)).astype(np.int64)
    xi1 = np.empty((n, 2))
    xi2 = np.empty((n, 2))
    good = np.ones(n, bool)
    for val in np.unique(i):
        sel = i == val
        p, ok = _annulus_points(rng, int(val), int(sel.sum()))
        xi1[sel] = p
        good[sel] &= ok
    for val in np.unique(j):
        sel = j == val
        p, ok = _annulus_points(rng, int(val), int(sel.sum()))
        xi2[sel] = p
        good[sel] &= ok
    # K^c inputs: d1 >= 2i-3, d2 >= 2j-3
    # d1 ranges up to the high input's shells so that cancellation occurs
    d1 = rng.integers(np.maximum(2 * i - 3, 0), 2 * j - 2 + b.extra)
    m1 = _shell_values(rng, d1)
    cross = -2.0 * np.einsum("ij,ij->i", xi1, xi2)
    xi = xi1 + xi2
    k = _shell(np.hypot(xi[:, 0], xi[:, 1]))
    # half the samples draw m2 freely, half aim the output into K
    targeted = rng.random(n) < 0.5
    d2_free = 2 * j - 3 + rng.integers(0, b.extra + 1, size=n)
    m2 = _shell_values(rng, d2_free)
    d_target = np.floor(rng.random(n) * np.maximum(2 * k - 3, 1)).astype(np.int64)
    m_target = _shell_values(rng, d_target)
    m2 = np.where(targeted, m_target - m1 - cross, m2)
    d2 = _shell(m2)
    good &= d2 >= 2 * j - 3
    m = m1 + m2 + cross
    d = _shell(m)
    landed = good & (np.abs(k - j) <= 2) & (d <= 2 * k - 4)
    cases = modulation_cases(d, d1, d2, strict=b.strict)
    viol = landed & (cases == 0)
    counts = {c: int(np.sum(landed & (cases == c))) for c in (1, 2, 3)}
    wit = []
    for t in np.flatnonzero(viol)[:max_w]:
        tau1 = xi1[t] @ xi1[t] + m1[t]
        tau2 = xi2[t] @ xi2[t] + m2[t]
        wit.append({"xi1": xi1[t].tolist(), "tau1": float(tau1),
                    "xi2": xi2[t].tolist(), "tau2": float(tau2),
                    "i": int(i[t]), "j": int(j[t]), "k": int(k[t]),
                    "d": int(d[t]), "d1": int(d1[t]), "d2": int(d2[t])})
    return CoverageReport("modulation", n, int(landed.sum()), counts,
                          int(viol.sum()), wit,
                          {"d": d[landed], "d1": d1[landed], "d2": d2[landed]})


def _tau_coverage(b: CaseBounds, n, rng, max_w) -> CoverageReport:
    lo, hi = b.k_range
    k = rng.integers(lo, hi + 1, size=n)
    xi = np.empty((n, 2))
    good = np.ones(n, bool)
    for val in np.unique(k):
        sel = k == val
        p, ok = _annulus_points(rng, int(val), int(sel.sum()))
        xi[sel] = p
        good[sel] &= ok
    d = 2 * k + 4 + rng.integers(0, b.extra + 1, size=n)
    mod = _shell_values(rng, d)
    tau = np.einsum("ij,ij->i", xi, xi) + mod
    good &= _shell(mod) == d
    m = rng.integers(0, d + b.extra + 1)
    tau1 = _shell_values(rng, m)
    tau2 = tau - tau1
    n_sh = _shell(tau2)
    cases = tau_cases(d, m, n_sh, strict=b.strict)
    viol = good & (cases == 0)
    counts = {c: int(np.sum(good & (cases == c))) for c in (1, 2, 3)}
    wit = []
    for t in np.flatnonzero(viol)[:max_w]:
        wit.append({"xi": xi[t].tolist(), "tau": float(tau[t]), "tau1": float(tau1[t]),
                    "tau2": float(tau2[t]), "k": int(k[t]), "d": int(d[t]),
                    "m": int(m[t]), "n": int(n_sh[t])})
    return CoverageReport("tau", n, int(good.sum()), counts, int(viol.sum()), wit,
                          {"d": d[good], "m": m[good], "n": n_sh[good]})


def tau_shell_bounds_hold(grid: FrequencyGrid) -> bool:
    """On A_k cap B_d with d >= 2k+4, every node has 2^{d-1} <= |tau| <= 2^{d+2}."""
    jj = grid.j_index.astype(np.int32)[:, :, None]
    sel = grid.d_index >= 2 * jj + 4
    if not sel.any():
        return True
    d = np.broadcast_to(grid.d_index, grid.shape)[sel].astype(float)
    t = np.abs(np.broadcast_to(grid.tau_axis[None, None, :], grid.shape)[sel])
    return bool(np.all((t >= 2.0 ** (d - 1)) & (t <= 2.0 ** (d + 2))))


# ---------------------------------------------------------------------------
# run-length CSV
# ---------------------------------------------------------------------------


def mask_to_rle_csv(mask: RegionMask, path=None) -> str:
    """Runs of set bits over the row-major flattened mask: (start, length)."""
    g = mask.grid
    flat = mask.bits.ravel().astype(np.int8)
    edges = np.diff(np.concatenate([[0], flat, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["#grid", g.n_xi, g.n_tau, repr(g.xi_max), repr(g.tau_max)])
    w.writerow(["#descriptor", repr(mask.descriptor)])
    w.writerow(["start", "length"])
    for s, e in zip(starts, ends):
        w.writerow([int(s), int(e - s)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def mask_from_rle_csv(source) -> RegionMask:
    from .grid import build_grid

    text = source if "\n" in str(source) else Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    h = rows[0]
    grid = build_grid(int(h[1]), int(h[2]), float(h[3]), float(h[4]))
    flat = np.zeros(int(np.prod(grid.shape)), dtype=bool)
    for r in rows[3:]:
        s, ln = int(r[0]), int(r[1])
        flat[s:s + ln] = True
    return RegionMask(grid, flat.reshape(grid.shape), ("rle", rows[1][1]))
