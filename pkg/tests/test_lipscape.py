import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lipfrag.lipscape import (
    LipscapeError,
    check_profile,
    default_scales,
    gap_detect,
    line_pool,
    lip_profile,
    liplip_check,
    porosity_saturate,
    porosity_scales,
    porosity_scan,
    witness_set,
)
from lipfrag.alberti import grid_lines
from lipfrag.space import build_space, cantor_coords, generate
from oracles import lip_at, porosity_ratio


def cantor_in_grid(level, grid_level):
    sp = generate("segment", n=3**grid_level + 1)
    ends = cantor_coords(level)[:, 0]
    x = sp.coords[:, 0]
    S = [int(i) for i in np.nonzero(np.abs(x[:, None] - ends[None, :]).min(axis=1) < 1e-12)[0]]
    return sp, S


def test_abs_at_zero():
    sp = build_space(np.linspace(-1, 1, 21))
    f = np.abs(sp.coords[:, 0])
    prof = lip_profile(sp, f, [0.1, 0.3, 0.5, 1.0], points=[10])
    assert np.allclose(prof.biglip, 1.0) and np.allclose(prof.smllip, 1.0)


def test_constant_function():
    sp = generate("grid", n=4)
    prof = lip_profile(sp, np.full(sp.size, 2.0))
    assert np.nanmax(prof.biglip) == 0.0
    rep = liplip_check(sp, np.full(sp.size, 2.0))
    assert rep.ok and np.allclose(rep.ratio, 1.0)


def test_cantor_gap_quotient():
    sp, S = cantor_in_grid(4, 6)
    f = sp.dist[:, S].min(axis=1)
    x = sp.coords[:, 0]
    # 1/3 borders the generation-1 gap (1/3, 2/3)
    y = int(np.argmin(np.abs(x - 1 / 3)))
    for k in (1, 2, 3):
        prof = lip_profile(sp, f, [3.0**-k], points=[y])
        if k == 1:
            assert prof.biglip[0, 0] >= 1 / 3 - 1e-9


@given(st.integers(0, 10_000), st.integers(5, 30))
def test_profile_matches_definition(seed, n):
    rng = np.random.default_rng(seed)
    sp = build_space(rng.uniform(0, 1, (n, 2)))
    f = rng.normal(size=n)
    scales = np.sort(rng.uniform(0.05, sp.diameter, 4))
    prof = lip_profile(sp, f, scales)
    for i in range(n):
        for k, r in enumerate(scales):
            ref = lip_at(sp.dist[i], f, i, r)
            if ref is None:
                assert np.isnan(prof.biglip[i, k])
            else:
                assert prof.biglip[i, k] == pytest.approx(ref[0])
                assert prof.smllip[i, k] == pytest.approx(ref[1])


@given(st.integers(0, 10_000))
def test_profile_invariants(seed):
    rng = np.random.default_rng(seed)
    sp = build_space(rng.uniform(0, 1, (25, 1)))
    f = np.cumsum(rng.normal(size=25))
    prof = lip_profile(sp, f)
    assert check_profile(prof) == []
    diff = np.abs(f[:, None] - f[None, :])
    pos = sp.dist > 0
    glob = (diff[pos] / sp.dist[pos]).max()
    assert np.nanmax(prof.biglip) <= glob + 1e-9
    ok = ~np.isnan(prof.biglip)
    assert np.all(prof.smllip[ok] <= prof.biglip[ok] + 1e-12)


def test_scales_validation():
    sp = generate("segment", n=5)
    with pytest.raises(LipscapeError):
        lip_profile(sp, np.zeros(5), [0.0, 0.5])
    with pytest.raises(LipscapeError):
        lip_profile(sp, np.zeros(5), [2.0])
    assert default_scales(sp, 3) == pytest.approx([0.25, 0.5, 1.0])


def test_profile_csv():
    sp = generate("segment", n=3)
    text = lip_profile(sp, sp.coords[:, 0], [0.5, 1.0]).to_csv().splitlines()
    assert text[0] == "id,r,biglip,smllip"
    assert len(text) == 1 + 6


def test_liplip_linear_grid():
    sp = generate("grid", n=5)
    rep = liplip_check(sp, sp.coords[:, 0] + 2 * sp.coords[:, 1])
    assert np.allclose(rep.ratio, 1.0)
    assert rep.ok and rep.flagged == ()


def test_liplip_flags_kink_free_oscillation():
    # a function flat near 0 at the finest scale but steep just beyond it
    sp = build_space([0.0, 0.01, 0.02, 0.5])
    f = np.array([0.0, 0.0, 0.01, 0.5])
    rep = liplip_check(sp, f)
    assert math.isinf(rep.ratio[0])
    assert 0 in rep.flagged


def test_porosity_everything_has_no_witness():
    sp = generate("segment", n=11)
    scan = porosity_scan(sp, range(11), [0.2, 0.4])
    assert scan.certified == 0.0
    assert np.all(scan.witness == -1)


def test_porosity_cantor_quarter():
    sp, S = cantor_in_grid(4, 6)
    scan = porosity_scan(sp, S, porosity_scales(1 / 3, 4))
    assert scan.certified >= 0.25


@given(st.integers(0, 10_000))
def test_porosity_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    sp = build_space(np.sort(rng.uniform(0, 1, 30)))
    Y = sorted(rng.choice(30, 8, replace=False).tolist())
    scales = [0.05, 0.1, 0.3]
    scan = porosity_scan(sp, Y, scales)
    for i, y in enumerate(Y):
        for k, r in enumerate(scales):
            assert scan.best[i, k] == pytest.approx(porosity_ratio(sp.dist, Y, y, r))
            w = scan.witness[i, k]
            if w >= 0:
                assert 0 < sp.dist[y, w] <= r + 1e-9
                gap = sp.dist[w, Y].min()
                assert gap / sp.dist[y, w] == pytest.approx(scan.best[i, k])


def test_dense_subset_has_small_constant():
    # every point lies within eps = 0.01 of Y, so a witness at distance d scores at most eps/d
    sp = generate("segment", n=101)
    Y = list(range(0, 101, 2))
    scan = porosity_scan(sp, Y, [0.1, 0.2])
    found = scan.witness >= 0
    assert np.all(scan.best[found] * scan.distance[found] <= 0.01 + 1e-12)


def test_witness_set():
    sp, S = cantor_in_grid(2, 4)
    x = sp.coords[:, 0]
    y = int(np.argmin(np.abs(x - 1 / 3)))
    wits = witness_set(sp, S, y, 0.5, 0.34)
    assert len(wits)
    for w in wits:
        assert sp.dist[w, S].min() > 0.5 * sp.dist[y, w]


def test_saturation_grows_and_recertifies():
    sp, S = cantor_in_grid(5, 6)
    scales = porosity_scales(1 / 3, 5)
    # the scan reports a supremum and witnesses need a strict inequality
    c = porosity_scan(sp, S, [0.75 * r for r in scales]).certified * (1 - 1e-9)
    sat = porosity_saturate(sp, S, c, scales)
    assert len(sat.members) > len(S)
    assert set(S) <= set(sat.members)
    assert sat.rescan.certified >= 2 * c / 3


def test_saturation_rejects_large_constant():
    sp, S = cantor_in_grid(3, 5)
    with pytest.raises(LipscapeError, match="too large"):
        porosity_saturate(sp, S, 50.0, porosity_scales(1 / 3, 3))


def test_gap_on_cantor():
    sp, S = cantor_in_grid(4, 6)
    f = sp.dist[:, S].min(axis=1)
    v = gap_detect(sp, S, f, 0.25, 0.0, line_pool(sp, S))
    assert v.candidate and "candidate" in v.label
    assert v.max_estimate == 0.0 and v.min_biglip >= 0.25


def test_no_gap_on_grid():
    sp = generate("grid", n=6)
    pool = grid_lines(sp, 6, 0) + grid_lines(sp, 6, 1)
    inner = [i for i in range(sp.size) if 0 < sp.coords[i, 0] < 1 and 0 < sp.coords[i, 1] < 1]
    v = gap_detect(sp, inner, sp.coords[:, 0], 0.5, 0.1, pool)
    assert not v.candidate
    assert v.max_estimate == pytest.approx(1.0)


def test_gap_precondition():
    sp = generate("segment", n=5)
    with pytest.raises(LipscapeError):
        gap_detect(sp, [0], np.zeros(5), 0.1, 0.2, [])
