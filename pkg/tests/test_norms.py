import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadiclab import GridFunction, SpaceSpec, build_grid, mixed_norm, norm_value, pasting_check, space_norm, synthesize
from dyadiclab.errors import PreconditionError, WeightOverflowError
from dyadiclab.grid import Delta, ParabolaSlab, RandomOnMask, bracket
from dyadiclab.norms import SPACE_KINDS, BoundaryWarning, log2_weight, weight_w
from dyadiclab.probes import probe_grid
from dyadiclab.regions import region_mask

J = (2, 3, 4, 5)


def unit_grid():
    return build_grid(4, 16, 2.0, 8.0)


def random_function(grid, seed, density=0.3):
    r = np.random.default_rng(seed)
    return GridFunction(grid, r.random(grid.shape) * (r.random(grid.shape) < density))


def slope(ys):
    return np.polyfit(J, ys, 1)[0]


def test_weight_examples():
    assert weight_w((0, 0), 3.0) == 1.0
    assert weight_w((0, 0), -2.0) == 1024.0
    assert log2_weight(-2.0) == pytest.approx(10.0)
    # submultiplicativity witness
    assert weight_w((0, 0), -4.0) <= 2**10 * weight_w((0, 0), -2.0) * weight_w((0, 0), -2.0)


@settings(max_examples=200, deadline=None)
@given(t1=st.floats(-1e3, 1e3), t2=st.floats(-1e3, 1e3))
def test_weight_submultiplicative(t1, t2):
    lw = log2_weight(t1 + t2)
    assert lw <= 10 + log2_weight(t1) + log2_weight(t2) + 1e-9


def test_unit_cell_values():
    g = unit_grid()
    f = synthesize(g, Delta((0.0, 0.0), 0.0))
    assert norm_value(f, "Ys", -0.75) == pytest.approx(2.0)
    for s, b in [(-0.75, 0.5), (0.3, -0.2), (-2.0, 3.0)]:
        assert norm_value(f, "Xsb_direct", s, b) == pytest.approx(1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        SpaceSpec("Zs_surrogate", -0.5, 0.7)
    with pytest.raises(ValueError):
        SpaceSpec("Hs")


@pytest.mark.parametrize("s,b", [(-0.75, 0.5), (-0.9, 0.5), (0.5, 0.8)])
def test_dyadic_direct_ratio(s, b, small_grid):
    for seed in range(10):
        f = random_function(small_grid, seed)
        r = norm_value(f, "Xsb_dyadic", s, b, warn_boundary=False) / norm_value(f, "Xsb_direct", s, b, warn_boundary=False)
        lim = 2.0 ** (abs(s) + abs(b))
        assert 1 / lim <= r <= lim


def test_besov_orderings(small_grid):
    g = small_grid
    for seed in range(10):
        f = random_function(g, seed)
        dy = norm_value(f, "Xsb_dyadic", -0.75, 0.5, warn_boundary=False)
        bs = norm_value(f, "Xsb_besov", -0.75, 0.5, warn_boundary=False)
        D = len(np.unique(g.d_index[f.values > 0]))
        assert dy <= bs * (1 + 1e-12)
        assert bs <= math.sqrt(D + 1) * dy


@pytest.mark.parametrize("kind", ["Xsb_dyadic", "Xsb_besov", "Ys", "Zs_surrogate", "Ws"])
def test_recombine(kind, small_grid):
    f = random_function(small_grid, 7, density=0.05)
    nb = space_norm(f, SpaceSpec(kind, -0.75, 0.5), warn_boundary=False)
    assert nb.recombine() == pytest.approx(nb.total, rel=1e-10)


def test_zs_parts(small_grid):
    f = random_function(small_grid, 3)
    nb = space_norm(f, SpaceSpec("Zs_surrogate", -0.75), warn_boundary=False)
    assert set(nb.parts) >= {"K", "Kc"}
    assert nb.total == pytest.approx(nb.parts["K"] + nb.parts["Kc"], rel=1e-12)


def test_json_schema(small_grid):
    f = random_function(small_grid, 3)
    d = json.loads(space_norm(f, SpaceSpec("Zs_surrogate", -0.75), warn_boundary=False).to_json())
    assert set(d) == {"kind", "s", "b", "total", "per_shell", "parts"}
    assert all(len(p) == 2 for p in d["per_shell"])


def test_boundary_warning():
    g = build_grid(16, 64, 4.0, 20.0)
    f = synthesize(g, Delta((3.5, 0.0), 12.0))
    with pytest.warns(BoundaryWarning):
        space_norm(f, SpaceSpec("Ys", -0.5))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_norm_monotonicity(seed):
    g = build_grid(8, 32, 2.0, 8.0)
    r = np.random.default_rng(seed)
    a = r.random(g.shape) * (r.random(g.shape) < 0.3)
    b = a + r.random(g.shape) * (r.random(g.shape) < 0.3)
    f, h = GridFunction(g, a), GridFunction(g, b)
    for k in SPACE_KINDS:
        assert norm_value(f, k, -0.75, warn_boundary=False) <= norm_value(h, k, -0.75, warn_boundary=False) * (1 + 1e-12)


def test_ws_overflow():
    g = build_grid(16, 64, 4.0, 20.0)
    f = synthesize(g, Delta((0.0, 0.0), -16.0, value=1e300))
    with pytest.raises(WeightOverflowError):
        norm_value(f, "Ws", -0.5)


def test_ws_equals_zs_on_upper_half(small_grid):
    g = small_grid
    mask = np.broadcast_to(g.tau_axis >= -1, g.shape)
    f = synthesize(g, RandomOnMask(mask, seed=4))
    assert norm_value(f, "Ws", -0.6, warn_boundary=False) == pytest.approx(
        norm_value(f, "Zs_surrogate", -0.6, warn_boundary=False), rel=1e-12)


def test_pasting_inside_k():
    g = build_grid(64, 1024, 16.0, 264.0)
    f = synthesize(g, RandomOnMask(region_mask(g, "K"), seed=1))
    rep = pasting_check(f, -0.75)
    assert rep.in_K and rep.ratio_inner == pytest.approx(1.0, rel=1e-12)


def test_pasting_outside_k():
    g = build_grid(64, 1024, 16.0, 264.0)
    mask = ~region_mask(g, "K") & region_mask(g, "A", 2)
    f = synthesize(g, RandomOnMask(mask, seed=1))
    rep = pasting_check(f, -0.75)
    assert rep.in_Kc and rep.ratio_outer == pytest.approx(1.0, rel=1e-12)


def test_pasting_precondition(small_grid):
    f = random_function(small_grid, 0)
    with pytest.raises(PreconditionError):
        pasting_check(f, 0.5)


def test_pasting_boundary_slabs_flat():
    outer, inner = [], []
    for j in J:
        g = probe_grid(j, (64, 1024), slab=2 * j)
        rep = pasting_check(synthesize(g, ParabolaSlab(j, 2 * j)), -0.75)
        outer.append(math.log2(rep.ratio_outer))
        inner.append(math.log2(rep.ratio_inner))
    assert abs(slope(outer)) <= 0.1
    assert abs(slope(inner)) <= 0.1


@pytest.mark.parametrize("d_of_j,side", [(lambda j: 2 * j - 4, "both"), (lambda j: 2 * j, "upper"),
                                         (lambda j: 2 * j + 2, "upper")])
def test_energy_estimate_scale_uniform(d_of_j, side):
    s = -0.75
    logs = []
    for j in J:
        d = d_of_j(j)
        g = probe_grid(j, (64, 1024), slab=d)
        f = synthesize(g, ParabolaSlab(j, d, side=side))
        v = f.values * bracket(g.xi_abs)[:, :, None] ** s
        lhs = mixed_norm(GridFunction(g, v), "L2xi_L1tau")
        logs.append(math.log2(lhs / norm_value(f, "Ws", s)))
    assert abs(slope(logs)) <= 0.1
