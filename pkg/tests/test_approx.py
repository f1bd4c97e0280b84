import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lipfrag.approx import (
    ApproxError,
    antichain_to_strip,
    disjointify,
    embed,
    mcshane_extend,
    onedim_approx,
    sort_strips,
    strip_membership,
    tau_approximate,
    union_indicator,
)
from lipfrag.poset import ChainNode, build_chain_order, mirsky_decompose, random_nodes
from lipfrag.space import build_space, cantor_coords, generate
from oracles import removed_length

LINE = generate("segment", n=11)


def test_mcshane_identity_and_single_anchor():
    d = LINE.dist
    vals = LINE.coords[:, 0]
    assert np.allclose(mcshane_extend(range(11), vals, d), vals)
    assert np.allclose(mcshane_extend([4], [0.0], d), d[:, 4])


def test_mcshane_two_anchors():
    d = 2 * LINE.dist  # anchors 0 and 10 sit at distance 2
    ext = mcshane_extend([0, 10], [0.0, 2.0], d)
    assert np.allclose(ext, np.minimum(d[:, 0], 2.0 + d[:, 10]))
    assert np.all(ext <= d[:, 0] + 1e-12) and np.all(ext <= 2.0 + d[:, 10] + 1e-12)


def test_mcshane_rejects_steep_anchors():
    with pytest.raises(ApproxError, match="not 1-Lipschitz"):
        mcshane_extend([0, 1], [0.0, 1.0], LINE.dist)


def test_singleton_strip_is_a_cone():
    p = build_chain_order([ChainNode(3, (), 0.5)], 1.0, 0.5, LINE)
    s = antichain_to_strip(p, [0], [3], LINE.dist, 0.2, centered=False)
    assert np.allclose(s.lower, 0.5 + LINE.dist[:, 3])


def test_strip_rejects_comparable_pair():
    p = build_chain_order([ChainNode(0, (), 0.0), ChainNode(0, (), 1.0)], 1.0, 0.5, LINE)
    with pytest.raises(ApproxError):
        antichain_to_strip(p, [0, 1], [0, 0], LINE.dist, 0.1)


def test_levels_give_lipschitz_strips():
    base = generate("segment", n=20)
    z, v, t = random_nodes(np.random.default_rng(0), 40, 20, q=1)
    p = build_chain_order((z, v, t), 0.5, math.pi / 4, base)
    d = 0.5 * base.dist
    for lv in mirsky_decompose(p):
        s = antichain_to_strip(p, lv, list(p.z), d, 0.1, centered=False)
        diff = np.abs(s.lower[:, None] - s.lower[None, :])
        assert np.all(diff <= d + 1e-9)


def test_sort_small_cases():
    one = np.array([[3.0, 1.0]])
    assert np.array_equal(sort_strips(one), one)
    two = np.array([[2.0, 2.0], [1.0, 0.5]])
    assert np.array_equal(sort_strips(two), [[1.0, 0.5], [2.0, 2.0]])


@given(st.integers(0, 10_000))
def test_sort_preserves_union_and_orders(seed):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(0, 1, (6, 50))
    out = sort_strips(rows)
    assert np.all(np.diff(out, axis=0) >= 0)
    assert np.allclose(np.sort(rows, axis=0), out)
    t = np.linspace(0, 1.3, 20)
    assert np.array_equal(union_indicator(rows, 0.1, t), union_indicator(out, 0.1, t))


def test_disjointify_identical_pair():
    row = np.linspace(0, 1, 5)
    dis = disjointify(np.array([row, row]), 0.1, np.zeros(5), np.zeros(5))
    assert np.allclose(dis.lower[1], row + dis.lambdas[0] * 0.1)
    assert 1 < dis.lambdas[0] < 1.5


@given(st.integers(0, 10_000))
def test_disjointify_random_family(seed):
    rng = np.random.default_rng(seed)
    rows = sort_strips(rng.uniform(0, 1, (5, 30)))
    t = rng.uniform(0, 2, 30)
    mass = rng.uniform(0, 1, 30)
    h = 0.1
    dis = disjointify(rows, h, t, mass)
    top = dis.lower + dis.widths[:, None]
    assert np.all(dis.lower[1:] >= top[:-1] - 1e-12)
    # a point inside an original strip of width h stays inside the pushed family
    before = ((t[None] > rows) & (t[None] < rows + h)).any(axis=0)
    after = strip_membership(dis.lower, dis.widths, t) >= 0
    lost = mass[before & ~after].sum()
    assert dis.covered_mass >= mass[before].sum() - lost - 1e-12
    assert dis.covered_mass + dis.uncovered_mass == pytest.approx(mass.sum())


def test_tau_examples():
    t = np.array([0.5, 2.0])
    assert np.array_equal(tau_approximate(t, np.zeros((0, 2)), np.zeros(0)), t)
    got = tau_approximate(t, np.array([[0.6, 0.6]]), np.array([0.3]))
    assert got == pytest.approx([0.5, 1.7])


def test_tau_rejects_low_strip():
    with pytest.raises(ApproxError, match="floor"):
        tau_approximate(np.array([1.0]), np.array([[-0.5]]), np.array([0.2]))


@given(st.integers(0, 10_000))
def test_tau_matches_interval_merge(seed):
    rng = np.random.default_rng(seed)
    rows = sort_strips(rng.uniform(0.0, 1.0, (4, 12)))
    dis = disjointify(rows, 0.15, np.zeros(12), np.zeros(12))
    t = rng.uniform(0, 2.5, 12)
    tau = tau_approximate(t, dis.lower, dis.widths)
    for p in range(12):
        spans = [(dis.lower[j, p], dis.lower[j, p] + dis.widths[j]) for j in range(len(dis))]
        assert tau[p] == pytest.approx(t[p] - removed_length(t[p], spans), abs=1e-12)


def test_empty_set_gives_exact_projection():
    f = np.linspace(0, 1, 11) ** 2
    ap = onedim_approx(LINE, [], f, [1.0], 0.5, math.pi / 4, 9)
    assert np.allclose(ap.values, f)
    assert ap.certificate["M_n"] == 0


def test_cantor_local_constant():
    x = cantor_coords(5)[:, 0]
    sp = build_space(x)
    ap = onedim_approx(sp, range(sp.size), x, [1.0], 0.1, math.pi / 4, 27)
    report = ap.certificate["local_lip_report"]
    assert report
    assert max(r["base_constant"] for r in report) <= 0.1 + 1e-9


def test_speed_column_is_flagged():
    sp = generate("grid", n=8)
    col = [3 * 8 + k for k in range(8)]
    ap = onedim_approx(sp, col, sp.coords, [0.0, 1.0], 0.5, math.pi / 4, 9)
    c = ap.certificate
    assert c["non_null_flag"]
    assert c["M_n"] >= 8


@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.sampled_from([9, 27]))
def test_certificate_bound_and_global_lipschitz(seed, q, n):
    rng = np.random.default_rng(seed)
    sp = generate("segment", n=60)
    x = sp.coords[:, 0]
    f = np.column_stack([x, rng.uniform(-0.2, 0.2) * x**2])[:, :q]
    w = np.ones(q) / math.sqrt(q)
    delta, alpha = rng.uniform(0.2, 1.0), rng.uniform(0.3, 1.3)
    S = sorted(rng.choice(60, 20, replace=False))
    ap = onedim_approx(sp, S, f, w, delta, alpha, n, local_audit=False)
    c = ap.certificate
    cot = 1 / math.tan(alpha) if q > 1 else 0.0
    bound = 3 * (1 + delta + cot) * c["M_n"] / n
    assert c["bound"] == pytest.approx(bound)
    assert np.abs(ap.cylinder.t - ap.tau_n).max() <= bound + 1e-9
    assert c["global_lip_ok"]


def test_parameter_errors():
    with pytest.raises(ApproxError, match="delta"):
        onedim_approx(LINE, [0], LINE.coords[:, 0], [1.0], 0.0, 0.5, 3)
    with pytest.raises(ApproxError, match="alpha"):
        onedim_approx(LINE, [0], LINE.coords[:, 0], [1.0], 1.0, 2.0, 3)
    with pytest.raises(ApproxError, match="unit"):
        embed(LINE, LINE.coords[:, 0], [2.0])
