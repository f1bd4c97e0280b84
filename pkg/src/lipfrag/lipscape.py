"""Pointwise Lipschitz landscape of a sampled function.

Scale-``r`` variations use exact discrete sups over closed balls, with the
inner scale ``s`` running over the distances actually realized from the
centre. Porosity scans and the porous completion work on index subsets of a
``FiniteMetricSpace``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .alberti import weaver_norm_estimate
from .fragment import Fragment, make_fragment
from .space import DEFAULT_TOL, FiniteMetricSpace, greedy_net, restrict


class LipscapeError(ValueError):
    pass


# --- profiles -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LipProfile:
    """``biglip[i, k]`` and ``smllip[i, k]`` at point ``i`` and scale ``scales[k]``.

    Entries are NaN where no positive distance from ``i`` is at most the
    scale. ``finest[i]`` is the column of the finest scale defined at ``i``
    and the summary values are read there.
    """

    ids: tuple[str, ...]
    scales: np.ndarray
    biglip: np.ndarray = field(repr=False)
    smllip: np.ndarray = field(repr=False)
    finest: np.ndarray = field(repr=False)

    @property
    def summary_biglip(self) -> np.ndarray:
        return _pick(self.biglip, self.finest)

    @property
    def summary_smllip(self) -> np.ndarray:
        return _pick(self.smllip, self.finest)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["id", "r", "biglip", "smllip"])
        for i, pid in enumerate(self.ids):
            for k, r in enumerate(self.scales):
                if np.isnan(self.biglip[i, k]):
                    continue
                wr.writerow([pid, repr(float(r)), repr(float(self.biglip[i, k])), repr(float(self.smllip[i, k]))])
        return buf.getvalue()


def _pick(table: np.ndarray, col: np.ndarray) -> np.ndarray:
    out = np.full(table.shape[0], np.nan)
    ok = col >= 0
    out[ok] = table[np.nonzero(ok)[0], col[ok]]
    return out


def default_scales(space: FiniteMetricSpace, count: int = 12) -> np.ndarray:
    """Geometric grid from the smallest positive distance up to the diameter."""
    pos = space.dist[space.dist > 0]
    if not len(pos):
        raise LipscapeError("space has no positive distances")
    lo, hi = float(pos.min()), float(pos.max())
    if count < 2 or lo == hi:
        return np.array([hi])
    return np.geomspace(lo, hi, count)


def _quotients(drow: np.ndarray, frow: np.ndarray):
    # realized distances s from one centre and q(s) = max_{d <= s} |df| / s
    order = np.argsort(drow, kind="stable")
    ds = drow[order]
    run = np.maximum.accumulate(np.abs(frow[order]))
    last = np.r_[ds[1:] != ds[:-1], True]
    s, m = ds[last], run[last]
    keep = s > 0
    return s[keep], m[keep] / s[keep]


def lip_profile(
    space: FiniteMetricSpace,
    f: Sequence[float],
    scales: Sequence[float] | None = None,
    points: Sequence[int] | None = None,
    tol: float = DEFAULT_TOL,
) -> LipProfile:
    """Upper and lower variation of ``f`` at each point and scale.

    ``biglip_at(x, r) = max_{s <= r} q(s)`` and ``smllip_at(x, r) = min_{s <= r} q(s)``
    where ``q(s) = max_{d(x,y) <= s} |f(x) - f(y)| / s`` and ``s`` ranges
    over realized distances from ``x``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (space.size,):
        raise LipscapeError(f"expected {space.size} function values, got {f.shape}")
    grid = default_scales(space) if scales is None else np.asarray(scales, dtype=float)
    if grid.ndim != 1 or not len(grid):
        raise LipscapeError("scale grid is empty")
    grid = np.sort(grid)
    if grid[0] <= 0 or grid[-1] > space.diameter + tol:
        raise LipscapeError("scales must lie in (0, diameter]")
    pts = np.arange(space.size) if points is None else np.asarray(points, dtype=int)
    big = np.full((len(pts), len(grid)), np.nan)
    small = np.full((len(pts), len(grid)), np.nan)
    finest = np.full(len(pts), -1, dtype=int)
    for row, x in enumerate(pts):
        s, q = _quotients(space.dist[x], f - f[x])
        if not len(s):
            continue
        up = np.maximum.accumulate(q)
        down = np.minimum.accumulate(q)
        pos = np.searchsorted(s, grid + tol, side="right") - 1
        ok = pos >= 0
        big[row, ok] = up[pos[ok]]
        small[row, ok] = down[pos[ok]]
        if ok.any():
            finest[row] = int(np.argmax(ok))
    ids = tuple(space.ids[i] for i in pts)
    for a in (big, small, finest):
        a.setflags(write=False)
    return LipProfile(ids, grid, big, small, finest)


def check_profile(profile: LipProfile, tol: float = 0.0) -> list[str]:
    """Problems with the ordering and monotonicity invariants (empty when fine)."""
    out = []
    big, small = profile.biglip, profile.smllip
    both = ~np.isnan(big)
    if np.any(small[both] > big[both] + tol):
        out.append("smllip exceeds biglip")
    for i in range(big.shape[0]):
        b, s = big[i][both[i]], small[i][both[i]]
        if np.any(np.diff(b) < -tol):
            out.append(f"biglip decreases with scale at {profile.ids[i]}")
        if np.any(np.diff(s) > tol):
            out.append(f"smllip increases with scale at {profile.ids[i]}")
    return out


@dataclass(frozen=True)
class LipLipReport:
    window: float
    ratio: np.ndarray = field(repr=False)
    flagged: tuple[int, ...]
    keith_tau: float | None
    keith_failures: tuple[int, ...]
    tol: float

    @property
    def ok(self) -> bool:
        return not self.flagged

    def to_dict(self, ids: Sequence[str]) -> dict:
        return {
            "window": self.window,
            "tol": self.tol,
            "ratio": {ids[i]: _json_ratio(r) for i, r in enumerate(self.ratio)},
            "flagged": [ids[i] for i in self.flagged],
            "keith_tau": self.keith_tau,
            "keith_failures": [ids[i] for i in self.keith_failures],
        }


def _json_ratio(r: float):
    return None if not math.isfinite(r) else float(r)


def liplip_check(
    space: FiniteMetricSpace,
    f: Sequence[float],
    tol: float = 1e-9,
    tau: float | None = None,
    scales: Sequence[float] | None = None,
    points: Sequence[int] | None = None,
) -> LipLipReport:
    """Compare ``biglip`` and ``smllip`` at the finest window defined at every point.

    The ratio is ``inf`` when ``smllip = 0 < biglip`` and ``1`` when both
    vanish. With ``tau`` given, points where ``tau*smllip < biglip - tol``
    are listed as well.
    """
    prof = lip_profile(space, f, scales, points, tol=DEFAULT_TOL)
    if np.any(prof.finest < 0):
        raise LipscapeError("some point has no realized distance inside the scale grid")
    col = int(prof.finest.max())
    big, small = prof.biglip[:, col], prof.smllip[:, col]
    ratio = np.ones(len(big))
    pos = small > 0
    ratio[pos] = big[pos] / small[pos]
    ratio[~pos & (big > tol)] = np.inf
    flagged = tuple(int(i) for i in np.nonzero(ratio > 1 + tol)[0])
    keith = ()
    if tau is not None:
        keith = tuple(int(i) for i in np.nonzero(tau * small < big - tol)[0])
    return LipLipReport(float(prof.scales[col]), ratio, flagged, tau, keith, tol)


# --- porosity -------------------------------------------------------------


@dataclass(frozen=True)
class PorosityWitness:
    center: int
    witness: int
    c: float
    scale: float


def porosity_scales(r_max: float, count: int) -> np.ndarray:
    return r_max * 2.0 ** -np.arange(count)


@dataclass(frozen=True, eq=False)
class PorosityScan:
    """Best constant ``best[i, k]`` over witnesses in ``B(Y[i], scales[k])``."""

    Y: tuple[int, ...]
    scales: np.ndarray
    best: np.ndarray = field(repr=False)
    witness: np.ndarray = field(repr=False)
    distance: np.ndarray = field(repr=False)

    @property
    def certified(self) -> float:
        """Largest constant below every entry (the minimum over points and scales)."""
        return float(self.best.min()) if self.best.size else 0.0

    def witnesses(self, i: int) -> list[PorosityWitness | None]:
        out = []
        for k in range(len(self.scales)):
            w = int(self.witness[i, k])
            out.append(None if w < 0 else PorosityWitness(self.Y[i], w, float(self.best[i, k]), float(self.distance[i, k])))
        return out

    def to_dict(self, space: FiniteMetricSpace) -> dict:
        rows = []
        for i, y in enumerate(self.Y):
            for k, r in enumerate(self.scales):
                w = int(self.witness[i, k])
                rows.append(
                    {
                        "center": space.ids[y],
                        "scale": float(r),
                        "c": float(self.best[i, k]),
                        "witness": None if w < 0 else space.ids[w],
                        "distance": None if w < 0 else float(space.dist[y, w]),
                    }
                )
        return {"certified": self.certified, "scales": [float(r) for r in self.scales], "witnesses": rows}


def _gap_to(space: FiniteMetricSpace, Y: np.ndarray) -> np.ndarray:
    return space.dist[:, Y].min(axis=1)


def porosity_scan(
    space: FiniteMetricSpace, Y: Sequence[int], scales: Sequence[float], tol: float = DEFAULT_TOL
) -> PorosityScan:
    """For each ``y`` in ``Y`` and each scale ``r`` the best ratio ``dist(y', Y)/d(y, y')``
    over points with ``0 < d(y, y') <= r``; ``Y`` is ``c``-porous at ``y``
    and scale ``r`` exactly when ``c`` is below that ratio. Ties go to the
    nearest witness, then the lowest index.
    """
    Y = np.asarray(sorted({int(i) for i in Y}), dtype=int)
    if not len(Y):
        raise LipscapeError("porosity needs a non-empty subset")
    grid = np.asarray(scales, dtype=float)
    if grid.ndim != 1 or not len(grid) or np.any(grid <= 0):
        raise LipscapeError("porosity scales must be positive")
    gap = _gap_to(space, Y)
    best = np.zeros((len(Y), len(grid)))
    wit = np.full((len(Y), len(grid)), -1, dtype=int)
    dist = np.zeros((len(Y), len(grid)))
    for i, y in enumerate(Y):
        d = space.dist[y]
        cand = np.nonzero((d > 0) & (gap > 0))[0]
        if not len(cand):
            continue
        ratio = gap[cand] / d[cand]
        order = np.lexsort((cand, d[cand], -ratio))
        cand, ratio, dc = cand[order], ratio[order], d[cand][order]
        for k, r in enumerate(grid):
            inside = np.nonzero(dc <= r + tol)[0]
            if len(inside):
                j = inside[0]
                best[i, k] = ratio[j]
                wit[i, k] = cand[j]
                dist[i, k] = dc[j]
    return PorosityScan(tuple(int(y) for y in Y), grid, best, wit, dist)


def witness_set(space: FiniteMetricSpace, Y: Sequence[int], y: int, c: float, radius: float, tol: float = DEFAULT_TOL):
    """Points of ``W_c(y, Y)`` inside the closed ball ``B(y, radius)``."""
    gap = _gap_to(space, np.asarray(list(Y), dtype=int))
    d = space.dist[y]
    return np.nonzero((d > 0) & (c * d < gap) & (d <= radius + tol))[0]


@dataclass(frozen=True, eq=False)
class Saturation:
    space: FiniteMetricSpace
    members: tuple[int, ...]
    K: tuple[int, ...]
    added: tuple[int, ...]
    levels: tuple[dict, ...]
    rescan: PorosityScan

    def to_dict(self, ambient: FiniteMetricSpace) -> dict:
        return {
            "members": [ambient.ids[i] for i in self.members],
            "added": [ambient.ids[i] for i in self.added],
            "levels": list(self.levels),
            "rescan": self.rescan.to_dict(self.space),
        }


SATURATION_SHRINK = 0.75


def porosity_saturate(
    space: FiniteMetricSpace, K: Sequence[int], c: float, scales: Sequence[float], tol: float = DEFAULT_TOL
) -> Saturation:
    """Enlarge ``K`` by witness points so that ``K`` is ``2c/3``-porous inside the result.

    For each audited scale ``r`` the witnesses are chosen inside balls of
    radius ``3r/4``: ``rho`` is the smallest over ``K`` of the farthest
    ``c``-witness distance, a greedy ``rho/3``-net of ``K`` is taken and
    each net point contributes its farthest witness. Every point of ``K``
    then sees one of them within ``r`` with ratio above ``2c/3``.
    """
    Kset = sorted({int(i) for i in K})
    if not Kset:
        raise LipscapeError("porous completion needs a non-empty set")
    if not c > 0:
        raise LipscapeError("porosity constant must be positive")
    Ka = np.asarray(Kset)
    sub = space.dist[np.ix_(Ka, Ka)]
    added: set[int] = set()
    levels = []
    for r in np.asarray(scales, dtype=float):
        radius = SATURATION_SHRINK * r
        far = np.zeros(len(Ka))
        pick = np.full(len(Ka), -1, dtype=int)
        for i, x in enumerate(Ka):
            ws = witness_set(space, Ka, int(x), c, radius, tol)
            if not len(ws):
                raise LipscapeError(
                    f"no {c}-witness within {radius:g} of point {space.ids[int(x)]}; the constant is too large"
                )
            d = space.dist[x, ws]
            j = int(np.lexsort((ws, -d))[0])
            far[i], pick[i] = d[j], ws[j]
        rho = float(far.min())
        net = greedy_net(sub, rho / 3.0, tol=0.0)
        chosen = sorted({int(pick[i]) for i in net})
        added.update(chosen)
        levels.append({"scale": float(r), "rho": rho, "net": [space.ids[int(Ka[i])] for i in net], "witnesses": [space.ids[w] for w in chosen]})
    members = sorted(set(Kset) | added)
    out = restrict(space, members)
    pos = {g: k for k, g in enumerate(members)}
    rescan = porosity_scan(out, [pos[i] for i in Kset], scales, tol)
    return Saturation(out, tuple(members), tuple(Kset), tuple(sorted(added - set(Kset))), tuple(levels), rescan)


# --- gap sets -------------------------------------------------------------


@dataclass(frozen=True)
class GapVerdict:
    candidate: bool
    label: str
    max_estimate: float
    min_biglip: float
    alpha: float
    beta: float
    tol: float
    failing_estimate: tuple[int, ...]
    failing_biglip: tuple[int, ...]

    def to_dict(self, space: FiniteMetricSpace) -> dict:
        return {
            "candidate": self.candidate,
            "label": self.label,
            "max_estimate": self.max_estimate,
            "min_biglip": self.min_biglip,
            "alpha": self.alpha,
            "beta": self.beta,
            "tol": self.tol,
            "failing_estimate": [space.ids[i] for i in self.failing_estimate],
            "failing_biglip": [space.ids[i] for i in self.failing_biglip],
        }


def gap_detect(
    space: FiniteMetricSpace,
    S: Sequence[int],
    f: Sequence[float],
    alpha: float,
    beta: float,
    pool: Sequence[Fragment],
    scales: Sequence[float] | None = None,
    tol: float = 1e-9,
) -> GapVerdict:
    """Check ``estimate <= beta`` and ``biglip >= alpha`` on ``S``.

    The estimate is the pool sup of fragment derivatives, and ``biglip`` is
    read at the finest audited scale. A positive answer only speaks for
    this measure and this pool, and the label says so.
    """
    if not alpha > beta:
        raise LipscapeError(f"need alpha > beta, got alpha={alpha}, beta={beta}")
    Sa = np.asarray(sorted({int(i) for i in S}), dtype=int)
    if not len(Sa):
        raise LipscapeError("gap detection needs a non-empty set")
    f = np.asarray(f, dtype=float)
    est = weaver_norm_estimate(space, f, pool)[Sa]
    big = lip_profile(space, f, scales, Sa).summary_biglip
    bad_est = tuple(int(Sa[i]) for i in np.nonzero(est > beta + tol)[0])
    bad_big = tuple(int(Sa[i]) for i in np.nonzero(~(big >= alpha - tol))[0])
    ok = not bad_est and not bad_big
    label = "gap candidate (relative to the given measure and fragment pool)" if ok else "not a gap candidate"
    return GapVerdict(ok, label, float(est.max()), float(np.nanmin(big)) if np.any(~np.isnan(big)) else float("nan"),
                      float(alpha), float(beta), tol, bad_est, bad_big)


def line_pool(space: FiniteMetricSpace, subset: Sequence[int]) -> list[Fragment]:
    """One fragment through ``subset`` of a 1-D coordinate space, ordered by coordinate."""
    if space.coords is None or space.coords.shape[1] != 1:
        raise LipscapeError("line pools need a one-dimensional coordinate space")
    idx = np.asarray(sorted({int(i) for i in subset}), dtype=int)
    x = space.coords[idx, 0]
    order = np.argsort(x, kind="stable")
    return [make_fragment(space, x[order], idx[order])]
