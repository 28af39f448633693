import math

import numpy as np
import pytest

from dyadiclab import GridFunction, build_grid, convolve, measure_convolve, mixed_norm, synthesize
from dyadiclab.errors import PreconditionError, RegionOutOfRangeError
from dyadiclab.grid import ParabolaSlab, bracket
from dyadiclab.parabola import ParabolaMeasure, annulus_measure, parabola_restrict, surface_density, thin_slab


def delta_profile(grid, xi):
    p = np.zeros((grid.n_xi, grid.n_xi))
    k1, k2, _ = grid.node_index(xi, 0.0)
    p[k1, k2] = 1.0
    return p


def test_disc_l2_matches_quadrature():
    g = build_grid(64, 64, 4.0, 20.0)
    rho = 3.0
    v = np.broadcast_to((g.xi_abs <= rho)[:, :, None], g.shape).astype(float)
    m = parabola_restrict(GridFunction(g, v), 0.0)
    exact = math.sqrt(2 * math.pi * ((1 + 4 * rho**2) ** 1.5 - 1) / 12)
    assert m.l2() == pytest.approx(exact, rel=0.02)


def test_delta_point_and_density():
    g = build_grid(16, 64, 4.0, 20.0)
    m = ParabolaMeasure(g, "P", 0.0, delta_profile(g, (1.0, 0.0)))
    assert m.tau_of(1.0) == 1.0
    assert surface_density(1.0) == pytest.approx(math.sqrt(5))
    assert m.total_mass() == pytest.approx(math.sqrt(5) * g.d_xi**2)
    bar = ParabolaMeasure(g, "Pbar", 0.0, delta_profile(g, (1.0, 0.0)))
    assert bar.tau_of(1.0) == -1.0


def test_restrict_samples_on_the_slice():
    g = build_grid(32, 256, 8.0, 68.0)
    f = synthesize(g, ParabolaSlab(2, 0))
    m = parabola_restrict(f, 0.0, j=2)
    assert np.all(m.profile[g.j_index == 2] == 1.0)


def test_restrict_exits_grid():
    g = build_grid(16, 64, 4.0, 20.0)
    with pytest.raises(RegionOutOfRangeError):
        parabola_restrict(GridFunction.zeros(g), 10.0)


def test_profile_support_checked():
    g = build_grid(16, 64, 4.0, 20.0)
    with pytest.raises(PreconditionError):
        ParabolaMeasure(g, "P", 0.0, delta_profile(g, (0.0, 0.0)), j=2)
    with pytest.raises(ValueError):
        ParabolaMeasure(g, "X", 0.0, delta_profile(g, (0.0, 0.0)))


def test_orthogonal_deltas_land_on_parabola():
    g = build_grid(32, 256, 8.0, 68.0)
    a, b = 2.0, 3.0
    ma = ParabolaMeasure(g, "P", 0.0, delta_profile(g, (a, 0.0)))
    mb = ParabolaMeasure(g, "P", 0.0, delta_profile(g, (0.0, b)))
    out = measure_convolve(ma, mb)
    nz = np.argwhere(out.values > 0)
    assert len(nz) == 1
    assert tuple(nz[0]) == g.node_index((a, b), a * a + b * b)


def test_thin_slab_agreement():
    g = build_grid(32, 1024, 8.0, 128.0)
    assert g.d_tau <= 0.25
    a = annulus_measure(g, 1)
    b = annulus_measure(g, 1, c=0.5)
    ref = convolve(thin_slab(a), thin_slab(b)).values
    got = measure_convolve(a, b).values
    assert np.linalg.norm(got - ref) <= 0.05 * np.linalg.norm(ref)


@pytest.mark.parametrize("k,d", [(2, 1), (3, 2), (3, 4)])
def test_e100_consistency(k, d):
    g = build_grid(64, 2048, 16.0, 264.0)
    h = synthesize(g, ParabolaSlab(k, d))
    lhs = float(np.sum(bracket(g.modulation) * h.values**2) * g.cell_volume)
    # 2^d * integral over the shell of ||h||^2_{L^2(P_b)} 2^{-k} db
    db = g.d_tau / 4
    lo, hi = 2.0**d - 1.0, 2.0 ** (d + 1) - 1.0
    bs = np.arange(lo + db / 2, hi, db)
    acc = 0.0
    for b in np.concatenate([bs, -bs]):
        acc += parabola_restrict(h, float(b), j=k).l2() ** 2 * db
    rhs = 2.0**d * 2.0**-k * acc
    assert 0.25 <= lhs / rhs <= 4.0


def test_measure_convolve_symmetric():
    g = build_grid(32, 256, 8.0, 68.0)
    a, b = annulus_measure(g, 0), annulus_measure(g, 1, c=1.5)
    assert np.allclose(measure_convolve(a, b).values, measure_convolve(b, a).values, rtol=1e-12)


def test_upward_parabolas_convolve_upward():
    g = build_grid(32, 256, 8.0, 68.0)
    out = measure_convolve(annulus_measure(g, 1), annulus_measure(g, 1))
    k1, k2, l = np.nonzero(out.values)
    tau = g.tau_axis[l]
    assert np.all(tau >= g.xi_sq[k1, k2] / 2 - g.d_tau / 2 - 1e-9)


def test_refined_mass_is_product_of_masses():
    g = build_grid(32, 512, 8.0, 68.0)
    a, b = annulus_measure(g, 1), annulus_measure(g, 1, "Pbar")
    out = measure_convolve(a, b, refine=3, binning="linear")
    total = out.values.sum() * g.cell_volume
    assert total == pytest.approx(a.total_mass() * b.total_mass(), rel=0.02)
    assert mixed_norm(out) > 0
