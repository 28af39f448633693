import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadiclab import (GridFunction, bilinear_map, build_grid, convolve, domination_excess,
                       duhamel_apply, estimate_ratio, mixed_norm, synthesize)
from dyadiclab.errors import PreconditionError, SupportOverflowError
from dyadiclab.grid import Delta, ParabolaSlab, RandomOnMask
from dyadiclab.probes import ProbeFamily, make_probe_pair, probe_grid


def naive_convolution(f, g):
    """Textbook quadruple loop over node pairs, output index = sum - centre."""
    grid = f.grid
    n, m = grid.n_xi, grid.n_tau
    out = np.zeros(grid.shape)
    a = np.argwhere(f.values > 0)
    b = np.argwhere(g.values > 0)
    for p in a:
        for q in b:
            k1 = p[0] + q[0] - n // 2
            k2 = p[1] + q[1] - n // 2
            l = p[2] + q[2] - m // 2
            if 0 <= k1 < n and 0 <= k2 < n and 0 <= l < m:
                out[k1, k2, l] += f.values[tuple(p)] * g.values[tuple(q)]
    return out * grid.cell_volume


def rand(grid, seed, density=1.0, tau_min=None):
    r = np.random.default_rng(seed)
    v = r.random(grid.shape) * (r.random(grid.shape) < density)
    if tau_min is not None:
        v[:, :, grid.tau_axis < tau_min] = 0.0
    return GridFunction(grid, v)


def test_delta_convolution():
    g = build_grid(8, 64, 4.0, 32.0)
    assert (g.d_xi, g.d_tau) == (1.0, 1.0)
    h = convolve(synthesize(g, Delta((1.0, 0.0), 2.0)), synthesize(g, Delta((0.0, 1.0), 3.0)))
    assert h.nnz() == 1
    assert h.values[g.node_index((1.0, 1.0), 5.0)] == pytest.approx(1.0)


def test_fft_matches_naive_loop():
    g = build_grid(8, 16, 2.0, 8.0)
    f, h = rand(g, 1, 0.2), rand(g, 2, 0.2)
    ref = naive_convolution(f, h)
    out = convolve(f, h, max_crop=None).values
    assert np.linalg.norm(out - ref) <= 1e-9 * np.linalg.norm(ref)


def test_fft_matches_direct_method():
    g = build_grid(8, 16, 2.0, 8.0)
    f, h = rand(g, 3), rand(g, 4)
    a = convolve(f, h, max_crop=None).values
    b = convolve(f, h, max_crop=None, method="direct").values
    assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(b)


def test_commutative(small_grid):
    f, h = rand(small_grid, 5, 0.1), rand(small_grid, 6, 0.1)
    a = convolve(f, h, max_crop=None).values
    b = convolve(h, f, max_crop=None).values
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12 * a.max())


def test_support_additivity():
    g = build_grid(32, 256, 8.0, 68.0)
    f = synthesize(g, ParabolaSlab(1, 0))
    h = synthesize(g, Delta((2.0, -1.0), 4.0))
    out = convolve(f, h)
    shifted = np.zeros(g.shape)
    k = g.node_index((2.0, -1.0), 4.0)
    c = (g.n_xi // 2, g.n_xi // 2, g.n_tau // 2)
    sh = tuple(k[i] - c[i] for i in range(3))
    shifted = np.roll(f.values > 0, sh, axis=(0, 1, 2))
    assert not np.any((out.values > 1e-14) & ~shifted)


def test_support_overflow():
    g = build_grid(16, 64, 4.0, 20.0)
    f = synthesize(g, Delta((3.5, 3.5), 15.0))
    with pytest.raises(SupportOverflowError):
        convolve(f, f)
    _, info = convolve(f, f, max_crop=None, return_info=True)
    assert info.cropped_fraction == pytest.approx(1.0)


def test_different_grids():
    a = synthesize(build_grid(16, 64, 4.0, 20.0), Delta((0, 0), 0))
    b = synthesize(build_grid(16, 128, 4.0, 20.0), Delta((0, 0), 0))
    with pytest.raises(PreconditionError):
        convolve(a, b)


def test_duhamel_multiplier():
    g = build_grid(8, 64, 4.0, 32.0)
    on = synthesize(g, Delta((1.0, 1.0), 2.0))
    off = synthesize(g, Delta((1.0, 1.0), 9.0))
    assert duhamel_apply(on).values.max() == 1.0
    assert duhamel_apply(off).values.max() == 0.125


def test_duhamel_contracts(small_grid):
    h = rand(small_grid, 8)
    assert mixed_norm(duhamel_apply(h)) <= mixed_norm(h)


def test_bilinear_equals_duhamel_on_upper_half(small_grid):
    f, h = rand(small_grid, 9, 0.05, tau_min=0.0), rand(small_grid, 10, 0.05, tau_min=0.0)
    a = bilinear_map(f, h, max_crop=None).values
    b = duhamel_apply(convolve(f, h, max_crop=None)).values
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13 * b.max())


def test_domination_random(small_grid):
    for seed in range(5):
        f, h = rand(small_grid, 2 * seed, 0.05), rand(small_grid, 2 * seed + 1, 0.05)
        rep = domination_excess(f, h, max_crop=None)
        assert rep["violations"] == 0
        assert rep["max_ratio"] <= 2.0**10


@settings(max_examples=20, deadline=None)
@given(a=st.floats(1e-3, 1e3), b=st.floats(1e-3, 1e3))
def test_bilinearity(a, b):
    g = build_grid(8, 16, 2.0, 8.0)
    f, h = rand(g, 11, 0.1), rand(g, 12, 0.1)
    base = bilinear_map(f, h, max_crop=None).values
    sc = bilinear_map(f.scaled(a), h.scaled(b), max_crop=None).values
    assert np.allclose(sc, a * b * base, rtol=1e-12, atol=1e-12 * a * b * base.max())


def test_monotone_in_first_argument(small_grid):
    f, h = rand(small_grid, 13, 0.05), rand(small_grid, 14, 0.05)
    bigger = f + rand(small_grid, 15, 0.05)
    lo = bilinear_map(f, h, max_crop=None).values
    hi = bilinear_map(bigger, h, max_crop=None).values
    assert np.all(lo <= hi + 1e-12 * hi.max())


def test_resonance_on_parabola_deltas():
    g = build_grid(32, 256, 8.0, 68.0)
    x1, x2 = np.array([2.0, 1.0]), np.array([1.5, -2.0])
    a = synthesize(g, Delta(tuple(x1), x1 @ x1))
    b = synthesize(g, Delta(tuple(x2), x2 @ x2))
    out = convolve(a, b)
    k = np.argwhere(out.values > 0)[0]
    assert g.modulation[tuple(k)] == pytest.approx(-2 * x1 @ x2, abs=g.d_tau)


def test_estimate_ratio_unit_cells():
    g = build_grid(8, 64, 4.0, 32.0)
    f = synthesize(g, Delta((0.0, 0.0), 0.0))
    r = estimate_ratio(f, f, -0.75)
    # output is the same unit cell, both norms are the Zs value of a unit cell
    assert r.norm_f == pytest.approx(2.0)
    assert r.ratio == pytest.approx(r.numerator.total / 4.0)
    assert r.numerator.total == pytest.approx(2.0)
    assert 0 < r.ratio < math.inf


def test_estimate_ratio_zero_norm(small_grid):
    f = GridFunction.zeros(small_grid)
    with pytest.raises(ZeroDivisionError):
        estimate_ratio(f, f, -0.5)


@pytest.mark.parametrize("c", [1e-3, 0.5, 7.0, 1e4])
def test_estimate_ratio_scale_invariant(c, small_grid):
    f, h = rand(small_grid, 16, 0.05, tau_min=0.0), rand(small_grid, 17, 0.05, tau_min=0.0)
    r0 = estimate_ratio(f, h, -0.5, max_crop=None).ratio
    assert estimate_ratio(f.scaled(c), h, -0.5, max_crop=None).ratio == pytest.approx(r0, rel=1e-10)


def test_parallel_probe_ratios_bounded():
    ratios = []
    for j in (3, 4, 5):
        fam = ProbeFamily("parallel_interaction", j)
        grid = probe_grid(j, slab=fam.slab)
        f, h = make_probe_pair(fam, grid)
        ratios.append(math.log2(estimate_ratio(f, h, -0.75).ratio))
    assert np.polyfit([3, 4, 5], ratios, 1)[0] <= 0.15
