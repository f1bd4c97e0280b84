from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lipfrag.space import generate
from lipfrag.zahorski import (
    LineSample,
    ZahorskiError,
    alpha_cap,
    build_independent,
    cantor_flat_family,
    cantor_independent,
    cantor_points,
    cantor_rho,
    exact,
    lambda_grid,
    liplip_violation_report,
    plan_schedule,
    sawtooth,
    truncate,
)


def truncation_properties(d, f, g, S, Sp, h, eps, L, tol=1e-9):
    """Pairwise check of the four truncation properties, written out directly."""
    n = len(f)
    dS = [min(d[x][s] for s in S) for x in range(n)]
    for x in range(n):
        assert -tol <= g[x] <= h + tol
        if dS[x] >= 2 * h / L + tol:
            assert abs(g[x]) <= tol
    for x in range(n):
        for y in range(n):
            if dS[x] <= h / L + tol and dS[y] <= h / L + tol:
                assert abs(g[x] - g[y]) <= abs(f[x] - f[y]) + tol
            assert abs(g[x] - g[y]) <= L * d[x][y] + tol
    for x in Sp:
        for y in range(n):
            if d[x][y] <= eps / L + tol:
                assert abs(abs(g[x] - g[y]) - abs(f[x] - f[y])) <= tol


def test_sawtooth_shape():
    t = np.linspace(0, 2, 9)
    assert np.allclose(sawtooth(t, 0.5, 0.0), [0, 0.25, 0.5, 0.25, 0, 0.25, 0.5, 0.25, 0])


def test_zero_function():
    sp = generate("segment", n=17)
    tr = truncate(sp, np.zeros(17), range(17), 0.25, 1 / 32, 1.0)
    assert np.allclose(tr.g, 0.0)
    assert tr.S_prime == tuple(range(17))


def test_identity_on_grid():
    sp = generate("segment", n=65)
    f = sp.coords[:, 0]
    tr = truncate(sp, f, range(65), 0.25, 1 / 32, 1.0)
    truncation_properties(sp.dist, f, tr.g, range(65), tr.S_prime, 0.25, 1 / 32, 1.0)
    assert tr.mass_fraction >= 1 - 4 * (1 / 32) / 0.25
    corner = (f - tr.offset) % 0.5
    assert np.allclose(tr.g, np.minimum(0.25 - np.abs(corner - 0.25), 0.25))


@given(st.integers(0, 10_000), st.sampled_from([(Fraction(1, 4), Fraction(1, 32)), (Fraction(1, 8), Fraction(1, 40))]))
def test_random_truncations_satisfy_contract(seed, he):
    h, eps = he
    rng = np.random.default_rng(seed)
    xs = sorted({Fraction(int(k), 64) for k in rng.integers(0, 129, 30)})
    sp = LineSample(tuple(xs), np.ones(len(xs)) / len(xs))
    steps = [Fraction(int(s), 4) for s in rng.integers(-4, 5, len(xs) - 1)]
    f = [Fraction(0)]
    for s, a, b in zip(steps, xs, xs[1:]):
        f.append(f[-1] + s * (b - a))
    S = sorted(rng.choice(len(xs), max(1, len(xs) // 3), replace=False).tolist())
    tr = truncate(sp, f, S, h, eps, 1)
    truncation_properties(sp.dist, f, tr.g, S, tr.S_prime, h, eps, 1, tol=0)


def test_truncation_preconditions():
    sp = generate("segment", n=9)
    with pytest.raises(ZahorskiError, match="h/4"):
        truncate(sp, np.zeros(9), [0], 0.25, 0.0625, 1.0)
    with pytest.raises(ZahorskiError, match="Lipschitz"):
        truncate(sp, 5 * sp.coords[:, 0], [0], 0.25, 0.01, 1.0)


def test_cantor_points():
    assert cantor_points(1) == [0, Fraction(1, 3), Fraction(2, 3), 1]
    assert len(cantor_points(5)) == 64


def test_cantor_family_level5():
    fam = cantor_flat_family(5, Fraction(1, 2), 1, ms=(9,))
    mem = fam.members[9]
    assert mem.rho == Fraction(1, 2 * 3**6)
    assert mem.ball_lip == 0
    assert mem.witness_ratio == pytest.approx(0.5)


def test_cantor_family_errors():
    with pytest.raises(ZahorskiError, match="resolution exhausted"):
        cantor_flat_family(2, Fraction(1, 2), 1, ms=(3**10,), max_generation=8)
    with pytest.raises(ZahorskiError, match="half the slope"):
        cantor_flat_family(2, Fraction(3, 4), 1)


@given(st.sampled_from([0.02, 0.05, 0.1, 0.2, 0.24]), st.integers(1, 4))
def test_schedule_recursion_and_decay(alpha, K):
    sched = plan_schedule(alpha, 1, cantor_rho(3), K)
    assert sched.check() == []
    a2 = exact(alpha) ** 2
    for k in range(1, K + 1):
        assert Fraction(1, sched.m[k - 1]) <= a2**k / 2 ** (k * (k + 1) // 2 + 4 * k)
        assert sched.eps[k - 1] < sched.h[k - 1] / 4
    assert sched.m == tuple(sorted(set(sched.m)))
    assert sched.tail(K) == a2 / 2 * (1 + sched.ratio / 2 ** (K + 5)) * sched.rho[K - 1]
    with pytest.raises(ZahorskiError):
        sched.tail(K + 1)


def test_schedule_uses_smallest_m():
    sched = plan_schedule(Fraction(1, 20), 1, cantor_rho(3), 1)
    bound = Fraction(1, 400) / 32
    assert sched.m[0] == int(1 / bound) + 1


def test_lambda_grid():
    grid = lambda_grid(2)
    assert len(grid) == 5**2 - 3**2
    assert all(max(abs(v) for v in lam) == 1 for lam in grid)


def test_single_level_single_function():
    res, fam = cantor_independent(2, Fraction(1, 2), 1, 0.05, 1, 1)
    assert len(res.psi) == 1
    assert all(a == b for a, b in zip(res.psi[0], res.truncations[0].g))
    assert res.ok


def test_alpha_cap():
    assert alpha_cap(0.5, 1) == pytest.approx(0.25)
    fam = cantor_flat_family(2, Fraction(1, 2), 1, ms=(3,))
    with pytest.raises(ZahorskiError, match="alpha"):
        build_independent(fam.space, fam.S, fam, 2, 0.3, 1)


def test_family_must_match_set():
    fam = cantor_flat_family(2, Fraction(1, 2), 1, ms=(3,))
    with pytest.raises(ZahorskiError, match="different set"):
        build_independent(fam.space, fam.S[:-1], fam, 1, 0.05, 1)


@pytest.mark.parametrize("alpha,K", [(0.05, 2), (0.24, 2), (0.2, 3)])
def test_certificates_and_violation(alpha, K):
    res, fam = cantor_independent(2, Fraction(1, 2), 1, alpha, 2, K)
    c = res.certificate
    assert res.ok and c["schedule_problems"] == []
    assert max(c["lip_measured"]) <= c["lip_bound"] + 1e-12
    assert c["min_variation"] >= c["lower_bound"] - c["tail"] - 1e-12
    rep = liplip_violation_report(fam.space, res.S_prime, res.phi, res.schedule, Fraction(1, 2))
    assert rep["ok"] and rep["rows"]
    ratios = [r["ratio"] for r in rep["rows"] if r["ratio"] is not None]
    assert all(r > 1 for r in ratios)
    if alpha == 0.05:
        assert min(ratios) >= 5


def test_empty_violation_report():
    res, fam = cantor_independent(1, Fraction(1, 2), 1, 0.05, 1, 1)
    rep = liplip_violation_report(fam.space, [], res.phi, res.schedule, Fraction(1, 2))
    assert rep["rows"] == [] and rep["ok"]


def test_float_copy_liplip_flags_points():
    from lipfrag.lipscape import liplip_check

    res, fam = cantor_independent(2, Fraction(1, 2), 1, 0.05, 2, 2)
    sp = fam.space.to_space()
    phi = np.array([float(v) for v in res.phi])
    rep = liplip_check(sp, phi, points=list(res.S_prime))
    assert all(r > 1 for r in rep.ratio)
