"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n PASS|FAIL`` line (with output
capture disabled so it shows up in a plain ``pytest -v`` run) and then
asserts the criterion at its stated tolerance.
"""

import math
import time

import numpy as np
import pytest

from dyadiclab import (GridFunction, PeriodicBox, build_grid, convolve, domination_excess,
                       linear_propagate, norm_value, pasting_check, picard_iterate,
                       proposition_suite, splitstep_solve, synthesize)
from dyadiclab.cli import run_config
from dyadiclab.grid import ParabolaSlab
from dyadiclab.lemmas import builtin_lemmas, run_all
from dyadiclab.probes import FAMILY_KINDS, ProbeFamily, make_probe_pair, probe_grid
from dyadiclab.solver import self_convergence

J = (2, 3, 4, 5)


@pytest.fixture
def announce(capsys):
    def _say(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
    return _say


def slope(xs, ys):
    return float(np.polyfit(xs, ys, 1)[0])


def test_c1_convolution_oracle(announce):
    g = build_grid(8, 16, 2.0, 8.0)
    r = np.random.default_rng(0)
    f, h = GridFunction(g, r.random(g.shape)), GridFunction(g, r.random(g.shape))
    t0 = time.perf_counter()
    fast = convolve(f, h, max_crop=None).values
    elapsed = time.perf_counter() - t0
    ref = convolve(f, h, max_crop=None, method="direct").values
    err = float(np.linalg.norm(fast - ref) / np.linalg.norm(ref))
    ok = err <= 1e-9 and elapsed < 1.0
    announce(1, ok, f"relative L2 error {err:.2e}, FFT time {elapsed:.3f} s")
    assert err <= 1e-9
    assert elapsed < 1.0


def test_c2_norm_consistency(announce):
    g = build_grid(16, 64, 4.0, 20.0)
    worst, violations = 0.0, 0
    ok = True
    for s, b in [(-0.75, 0.5), (-0.9, 0.5)]:
        lim = 2.0 ** (abs(s) + abs(b))
        for seed in range(100):
            r = np.random.default_rng(seed)
            f = GridFunction(g, r.random(g.shape) * (r.random(g.shape) < 0.3))
            dy = norm_value(f, "Xsb_dyadic", s, b, warn_boundary=False)
            direct = norm_value(f, "Xsb_direct", s, b, warn_boundary=False)
            besov = norm_value(f, "Xsb_besov", s, b, warn_boundary=False)
            ratio = dy / direct
            worst = max(worst, abs(math.log2(ratio)))
            ok &= 1 / lim <= ratio <= lim
            violations += dy > besov * (1 + 1e-12)
    ok &= violations == 0
    announce(2, ok, f"max |log2(dyadic/direct)| {worst:.3f}, l2<=l1 violations {violations}")
    assert ok


def test_c3_pasting(announce):
    outer, inner = [], []
    for j in J:
        g = probe_grid(j, (64, 1024), slab=2 * j)
        rep = pasting_check(synthesize(g, ParabolaSlab(j, 2 * j)), -0.75)
        outer.append(math.log2(rep.ratio_outer))
        inner.append(math.log2(rep.ratio_inner))
    so, si = slope(J, outer), slope(J, inner)
    ok = abs(so) <= 0.1 and abs(si) <= 0.1
    announce(3, ok, f"outer slope {so:+.3f}, inner slope {si:+.3f}")
    assert ok


def test_c4_lemma_suite(announce):
    specs = builtin_lemmas()
    assert sum(s.kind == "sharp" for s in specs) == 14
    assert sum(s.kind == "domination" for s in specs) == 3
    t0 = time.perf_counter()
    fits = run_all()
    elapsed = time.perf_counter() - t0
    bad = []
    for fit in fits:
        for e in fit.entries:
            if e.kind == "sharp" and e.n_samples < 4:
                bad.append(f"{fit.lemma}:{e.index} has {e.n_samples} samples")
            elif not e.passed:
                bad.append(f"{fit.lemma}:{e.index} fitted {e.fitted:.3f} vs {e.predicted:g}")
        if fit.kind == "domination":
            worst = max(s.value for s in fit.samples)
            if not worst <= 0.0:
                bad.append(f"{fit.lemma} sample log2(lhs/rhs) {worst:.3f}")
    ok = not bad and elapsed <= 600
    n_pass = sum(f.passed for f in fits)
    announce(4, ok, f"{n_pass}/{len(fits)} specs pass in {elapsed:.0f} s"
             + (f"; failing: {'; '.join(bad)}" if bad else ""))
    assert elapsed <= 600
    assert not bad


def test_c5_proposition_suite(announce):
    tables = proposition_suite([-0.9, -0.75, -0.5], j_list=J)
    recorded = proposition_suite(-1.05, j_list=J, check_range=False)
    bad = [f"{e} s={s:g} slope {t.slope:+.3f}" for (e, s), t in sorted(tables.items()) if not t.slope <= 0.15]
    rec = ", ".join(f"{e} {t.slope:+.3f}" for (e, _), t in sorted(recorded.items()))
    ok = not bad
    announce(5, ok, ("all 12 slopes <= 0.15" if ok else "over threshold: " + "; ".join(bad))
             + f"; recorded at s=-1.05: {rec}")
    assert all(math.isfinite(t.slope) for t in recorded.values())
    assert not bad


def test_c6_pointwise_domination(announce):
    total, worst = 0, 0.0
    for kind in FAMILY_KINDS:
        for j in J:
            fam = ProbeFamily(kind, j)
            grid = probe_grid(j, slab=fam.slab)
            f, g = make_probe_pair(fam, grid)
            rep = domination_excess(f, g)
            total += rep["violations"]
            worst = max(worst, rep["max_ratio"])
    ok = total == 0
    announce(6, ok, f"{total} violations over {len(FAMILY_KINDS) * len(J)} probe pairs, "
             f"max B/duhamel ratio {worst:.3g} (constant 2^10)")
    assert ok


def test_c7_solver_properties(announce):
    box = PeriodicBox(32)
    r = np.random.default_rng(0)
    u = r.standard_normal((32, 32)) + 1j * r.standard_normal((32, 32))
    a = np.linalg.norm(u)
    unit = 0.0
    for _ in range(10):
        u = box.ifft(linear_propagate(box.fft(u), 0.01, box))
        unit = max(unit, abs(np.linalg.norm(u) - a) / a)

    c = 0.7 - 0.2j
    tr = splitstep_solve(np.full((8, 8), c), 1.0, 1e-3, save_every=100)
    exact = c / (1 + 1j * tr.times * c)
    got = np.array([v[0, 0] for v in tr.snapshots])
    closed = float(np.max(np.abs(got - exact) / np.abs(exact)))

    box64 = PeriodicBox(64)
    x, y = box64.coords()
    order = self_convergence(0.5 * np.exp(1j * x) * np.cos(y) + 0.2, 1.0, 0.05, box64)["order"]

    grid = build_grid(32, 512, 8.0, 68.0)
    factors = []
    for eps in (0.05, 0.0125, 0.003125):
        data = np.where(grid.j_index == 1, eps, 0.0)
        factors.append(picard_iterate(data, -0.75, 4, grid).contraction)
    picard_ok = all(f < 1 for f in factors) and factors[0] > factors[1] > factors[2]

    checks = {"unitarity": unit <= 1e-12, "closed form": closed <= 1e-6,
              "order": abs(order - 2.0) <= 0.2, "picard": picard_ok}
    ok = all(checks.values())
    announce(7, ok, f"unitarity {unit:.1e}, closed form {closed:.1e}, order {order:.3f}, "
             f"picard factors {', '.join(f'{f:.3g}' for f in factors)}")
    assert ok, checks


CONFIGS = {
    "lemmas": """
[experiment]
kind = lemmas
seed = 11
[grid]
n_xi = 32
n_tau = 512
[lemmas]
names = INV_MOD, GE
profile = random
""",
    "solver": """
[experiment]
kind = solver
seed = 11
[solver]
n = 16
T = 0.2
dt = 0.05
""",
}


def test_c8_determinism(announce, tmp_path):
    compared, differing = 0, []
    for kind, text in CONFIGS.items():
        cfg = tmp_path / f"{kind}.ini"
        cfg.write_text(text)
        runs = []
        for rep in ("a", "b"):
            code, out = run_config(cfg, out_dir=tmp_path / rep / kind)
            assert code == 0
            runs.append(out)
        csvs = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*.csv"))
        assert csvs
        for rel in csvs:
            compared += 1
            if (runs[0] / rel).read_bytes() != (runs[1] / rel).read_bytes():
                differing.append(f"{kind}/{rel}")
    ok = not differing
    announce(8, ok, f"{compared} CSV files compared, {len(differing)} differ")
    assert ok
