"""Truncation of Lipschitz functions and the construction of independent ones.

Everything here runs either on a ``FiniteMetricSpace`` in floating point or
on a ``LineSample``, whose coordinates, distances and function values are
exact rationals. Deep schedules shrink scales super-exponentially, so the
exact backend is the one that makes the certificates meaningful there.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .space import FiniteMetricSpace, build_space

FLOAT_TOL = 1e-9
LAMBDA_LEVELS = (-1.0, -0.5, 0.0, 0.5, 1.0)
MAX_OFFSET_CANDIDATES = 1 << 16
DEFAULT_MAX_DEPTH = 8


class ZahorskiError(ValueError):
    """A failed precondition or certificate; ``pair`` names the witnesses when known."""

    def __init__(self, message: str, pair: tuple[int, ...] = ()):
        super().__init__(message)
        self.pair = tuple(pair)


# --- exact line samples ---------------------------------------------------


def exact(x) -> Fraction:
    """Exact rational from an int, Fraction or the shortest decimal of a float."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(repr(float(x)))


@dataclass(frozen=True, eq=False)
class LineSample:
    """Finitely many points of the real line with exact coordinates."""

    coords: tuple[Fraction, ...]
    weights: np.ndarray
    ids: tuple[str, ...] = ()
    dist: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = np.array(self.coords, dtype=object)
        object.__setattr__(self, "dist", np.abs(c[:, None] - c[None, :]))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if not self.ids:
            object.__setattr__(self, "ids", tuple(str(k) for k in range(len(self.coords))))

    @property
    def size(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return self.size

    def to_space(self) -> FiniteMetricSpace:
        """Floating point copy; distances are rounded from the exact ones."""
        dist = self.dist.astype(float)
        return build_space([float(x) for x in self.coords], dist, self.weights, self.ids)


Sample = FiniteMetricSpace | LineSample


def _is_exact(space: Sample) -> bool:
    return space.dist.dtype == object


def _num(x, ex: bool):
    return exact(x) if ex else float(x)


def _vec(values, ex: bool) -> np.ndarray:
    if ex:
        return np.array([exact(v) for v in values], dtype=object)
    return np.asarray(values, dtype=float)


def _tol(tol, ex: bool):
    if tol is None:
        return Fraction(0) if ex else FLOAT_TOL
    return exact(tol) if ex else float(tol)


def _pairs(v: np.ndarray) -> np.ndarray:
    return np.abs(v[:, None] - v[None, :])


def _ratios(num: np.ndarray, d: np.ndarray) -> np.ndarray:
    pos = d > 0
    return np.where(pos, num / np.where(pos, d, 1), 0)


def _worst(excess: np.ndarray, tol) -> tuple[int, int] | None:
    k = int(np.argmax(excess))
    i, j = divmod(k, excess.shape[1])
    return (i, j) if excess[i, j] > tol else None


def _dist_to(space: Sample, S: np.ndarray) -> np.ndarray:
    return space.dist[:, S].min(axis=1)


def _index_set(S: Sequence[int], n: int) -> np.ndarray:
    a = np.asarray(sorted({int(i) for i in S}), dtype=int)
    if not len(a):
        raise ZahorskiError("the set S is empty")
    if a[0] < 0 or a[-1] >= n:
        raise ZahorskiError("S index out of range")
    return a


# --- truncation -----------------------------------------------------------


def sawtooth(t: np.ndarray, h, offset) -> np.ndarray:
    """Triangle wave of slope 1 between 0 and ``h`` with corners at ``offset + k h``."""
    return h - np.abs(((t - offset) % (2 * h)) - h)


def _clean_run(a, b, offset, h, tol) -> bool:
    # no sawtooth corner strictly between a <= b
    nxt = offset + ((a - offset + tol) // h + 1) * h
    return nxt >= b - tol


@dataclass(frozen=True, eq=False)
class Truncation:
    g: np.ndarray = field(repr=False)
    S_prime: tuple[int, ...]
    offset: object
    h: object
    eps: object
    L: object
    mass_fraction: float
    audit: dict


def truncate(
    space: Sample,
    f: Sequence,
    S: Sequence[int],
    h,
    eps,
    L,
    tol=None,
) -> Truncation:
    """``g = min(sawtooth(f), clamp(2h - L dist(., S), 0, h))`` with an offset maximizing ``mu(S')``.

    ``S'`` collects the points of ``S`` where every ``y`` with
    ``d(x, y) <= eps/L`` keeps ``f(x), f(y)`` on one monotone piece of the
    sawtooth. Offsets are ``k eps/2`` for ``k < 4h/eps``; the first one
    reaching the largest mass wins. All contract properties are audited
    pairwise and a failure raises with the offending pair.
    """
    ex = _is_exact(space)
    h, eps, L, tol = _num(h, ex), _num(eps, ex), _num(L, ex), _tol(tol, ex)
    if not (0 < eps < h / 4):
        raise ZahorskiError(f"eps must lie in (0, h/4); got eps={eps}, h={h}")
    if not L > 0:
        raise ZahorskiError("L must be positive")
    f = _vec(f, ex)
    n = space.size
    if f.shape != (n,):
        raise ZahorskiError(f"expected {n} values")
    Sa = _index_set(S, n)
    df = _pairs(f)
    bad = _worst(df - L * space.dist, tol)
    if bad:
        raise ZahorskiError(f"f is not {L}-Lipschitz on the pair {bad}", bad)
    dS = _dist_to(space, Sa)
    cutoff = np.minimum(np.maximum(2 * h - L * dS, 0), h)

    radius = eps / L
    lo, hi = [], []
    for x in Sa:
        ball = space.dist[x] <= radius + tol
        lo.append(f[ball].min())
        hi.append(f[ball].max())
    w = space.weights[Sa]
    total = float(w.sum())
    count = min(math.ceil(4 * h / eps), MAX_OFFSET_CANDIDATES)
    best, best_off, best_mask = -1.0, None, None
    for k in range(count):
        off = k * eps / 2
        mask = np.array(
            [_clean_run(lo[i], f[x], off, h, tol) and _clean_run(f[x], hi[i], off, h, tol) for i, x in enumerate(Sa)]
        )
        mass = float(w[mask].sum())
        if mass > best:
            best, best_off, best_mask = mass, off, mask
            if mass >= total:
                break
    g = np.minimum(sawtooth(f, h, best_off), cutoff)
    Sp = tuple(int(x) for x in Sa[best_mask])
    frac = best / total if total > 0 else 1.0
    audit = audit_truncation(space, f, g, Sa, Sp, h, eps, L, tol, frac, df)
    return Truncation(g, Sp, best_off, h, eps, L, frac, audit)


def audit_truncation(
    space: Sample, f, g, S, S_prime, h, eps, L, tol, mass_fraction: float | None = None, df: np.ndarray | None = None
) -> dict:
    """Check the four contract properties and the Lipschitz bound of ``g`` on every pair."""
    d = space.dist
    Sa = np.asarray(S, dtype=int)
    bad = np.nonzero((g < -tol) | (g > h + tol))[0]
    if len(bad):
        raise ZahorskiError(f"property (1) fails at point {int(bad[0])}: g outside [0, h]", (int(bad[0]),))
    dS = _dist_to(space, Sa)
    bad = np.nonzero((g > tol) & (dS >= 2 * h / L + tol))[0]
    if len(bad):
        raise ZahorskiError(f"property (2) fails at point {int(bad[0])}: g > 0 outside B(S, 2h/L)", (int(bad[0]),))
    df = _pairs(f) if df is None else df
    dg = _pairs(g)
    near = dS <= h / L + tol
    pair = _worst(np.where(near[:, None] & near[None, :], dg - df, 0), tol)
    if pair:
        raise ZahorskiError(f"property (3) fails for pair {pair}: |dg| > |df| near S", pair)
    if len(S_prime):
        Sp = np.asarray(S_prime, dtype=int)
        close = d[Sp] <= eps / L + tol
        gap = np.where(close, np.abs(df[Sp] - dg[Sp]), 0)
        p = _worst(gap, tol)
        if p:
            pair = (int(Sp[p[0]]), p[1])
            raise ZahorskiError(f"property (4) fails for pair {pair}: |dg| != |df| within eps/L", pair)
    pair = _worst(dg - L * d, tol)
    if pair:
        raise ZahorskiError(f"g is not {L}-Lipschitz on the pair {pair}", pair)
    floor = 1 - 4 * float(eps / h)
    if mass_fraction is not None and mass_fraction < floor - FLOAT_TOL:
        raise ZahorskiError(f"property (4) mass bound fails: {mass_fraction} < {floor}")
    return {
        "max_g": float(g.max()),
        "lip_g": float(_ratios(dg, d).max()),
        "mass_fraction": mass_fraction,
        "mass_floor": floor,
        "properties": [1, 2, 3, 4],
    }


# --- schedule -------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Levels ``k = 1..K`` with ``m_k``, ``h_k``, ``eps_k = L/m_k`` and ``rho_{m_k}``; all exact."""

    alpha: Fraction
    L: Fraction
    m: tuple[int, ...]
    h: tuple[Fraction, ...]
    eps: tuple[Fraction, ...]
    rho: tuple[Fraction, ...]

    @property
    def K(self) -> int:
        return len(self.m)

    @property
    def ratio(self) -> Fraction:
        q = self.alpha**2 / self.L
        return q / (1 - q)

    def lip_bound(self) -> Fraction:
        return 3 * (self.L + self.alpha + self.ratio * (1 + self.alpha / 64))

    def lower_bound(self, delta0) -> Fraction:
        return exact(delta0) - self.ratio - self.alpha

    def remark_bound(self) -> Fraction:
        return self.alpha + self.ratio * (1 + self.alpha / 64)

    def tail(self, K: int | None = None) -> Fraction:
        """Bound on ``sum_{k > K} 2 h_k`` for any continuation of the schedule."""
        K = self.K if K is None else K
        if not 1 <= K <= self.K:
            raise ZahorskiError(f"tail needs a built level, got K={K}")
        return self.alpha**2 / 2 * (1 + self.ratio / 2 ** (K + 5)) * self.rho[K - 1]

    def mass_bound(self) -> Fraction:
        out = Fraction(1)
        for h, e in zip(self.h, self.eps):
            out *= 1 - 4 * e / h
        return out

    def check(self) -> list[str]:
        """Violated recursion or decay inequalities (empty when all hold)."""
        a2, L = self.alpha**2, self.L
        out = []
        for k in range(1, self.K + 1):
            inv = Fraction(1, self.m[k - 1])
            if k == 1:
                if not (inv < a2 / (32 * L) and self.h[0] == a2 / 4):
                    out.append("level 1 does not satisfy its choice")
            else:
                if not (inv < a2 / (2 ** (k + 4) * L) * self.rho[k - 2] and self.h[k - 1] == a2 / 4 * self.rho[k - 2]):
                    out.append(f"level {k} does not satisfy the recursion")
            if self.eps[k - 1] != L * inv:
                out.append(f"level {k}: eps != L/m")
            if not (0 < self.rho[k - 1] < inv):
                out.append(f"level {k}: rho outside (0, 1/m)")
            if inv > (a2 / L) ** k * Fraction(1, 2 ** (k * (k + 1) // 2 + 4 * k)):
                out.append(f"level {k}: 1/m exceeds the decay bound")
        return out

    def to_dict(self) -> dict:
        return {
            "alpha": float(self.alpha),
            "L": float(self.L),
            "levels": [
                {"k": k + 1, "m": self.m[k], "h": float(self.h[k]), "eps": float(self.eps[k]), "rho": float(self.rho[k])}
                for k in range(self.K)
            ],
            "tail": float(self.tail()),
            "mass_bound": float(self.mass_bound()),
        }


def _next_m(bound: Fraction, available: Sequence[int] | None) -> int | None:
    # smallest admissible m with 1/m < bound
    least = math.floor(1 / bound) + 1
    if available is None:
        return least
    ok = [m for m in available if m >= least]
    return min(ok) if ok else None


def plan_schedule(
    alpha,
    L,
    rho: Callable[[int], Fraction],
    K: int | None = None,
    available: Sequence[int] | None = None,
    feasible: Callable[[int], bool] | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> Schedule:
    """Choose ``m_1 < m_2 < ...`` as small as the recursion allows.

    ``rho(m)`` gives the flatness radius of the family member ``m``;
    ``available`` restricts ``m`` to a finite list and ``feasible`` rejects
    members the sample cannot resolve. With ``K`` omitted the schedule is
    as deep as these allow (at most ``max_depth``).
    """
    alpha, L = exact(alpha), exact(L)
    a2 = alpha**2
    ms, hs, es, rs = [], [], [], []
    depth = max_depth if K is None else K
    for k in range(1, depth + 1):
        if k == 1:
            bound, h = a2 / (32 * L), a2 / 4
        else:
            bound, h = a2 / (2 ** (k + 4) * L) * rs[-1], a2 / 4 * rs[-1]
        m = _next_m(bound, available)
        if m is None or (feasible is not None and not feasible(m)):
            if K is None and k > 1:
                break
            raise ZahorskiError(f"schedule infeasible at level {k}: no usable flat function with 1/m < {float(bound):.3g}")
        r = exact(rho(m))
        ms.append(int(m))
        hs.append(h)
        es.append(L / m)
        rs.append(r)
    sched = Schedule(alpha, L, tuple(ms), tuple(hs), tuple(es), tuple(rs))
    problems = sched.check()
    if problems:
        raise ZahorskiError("; ".join(problems))
    return sched


# --- flat families --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlatMember:
    m: int
    values: np.ndarray = field(repr=False)
    rho: object
    ball_lip: float
    witness_ratio: float
    witnesses: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class FlatFamily:
    """Audited flat functions ``m -> f_m`` on a sample, with flatness radii ``rho_m``."""

    space: Sample
    S: tuple[int, ...]
    L: object
    delta0: object
    members: Mapping[int, FlatMember]
    rho_rule: Callable[[int], Fraction] | None = None
    max_m: int | None = None

    def rho(self, m: int) -> Fraction:
        if m in self.members:
            return exact(self.members[m].rho)
        if self.rho_rule is None:
            raise ZahorskiError(f"no flat function for m={m}")
        return self.rho_rule(m)

    def feasible(self, m: int) -> bool:
        if self.rho_rule is None:
            return m in self.members
        return self.max_m is None or m <= self.max_m


def audit_flat(space: Sample, S: Sequence[int], values, m: int, rho, L, delta0, tol=None) -> FlatMember:
    """Flatness on ``rho``-balls around ``S``, a ``delta0``-witness within ``1/m``, global ``L``-Lipschitz."""
    ex = _is_exact(space)
    tol = _tol(tol, ex)
    rho, L, delta0 = _num(rho, ex), _num(L, ex), _num(delta0, ex)
    inv = _num(Fraction(1, m), ex)
    if not (0 < rho < inv):
        raise ZahorskiError(f"m={m}: rho must lie in (0, 1/m)")
    f = _vec(values, ex)
    d = space.dist
    df = _pairs(f)
    pair = _worst(df - L * d, tol)
    if pair:
        raise ZahorskiError(f"m={m}: f_m is not {L}-Lipschitz on the pair {pair}", pair)
    Sa = _index_set(S, space.size)
    worst_ball, worst_wit, wits = 0.0, math.inf, []
    for x in Sa:
        ball = np.nonzero(d[x] <= rho + tol)[0]
        sub = _ratios(df[np.ix_(ball, ball)], d[np.ix_(ball, ball)])
        lip = sub.max()
        if lip > inv + tol:
            i, j = divmod(int(np.argmax(sub)), len(ball))
            raise ZahorskiError(f"m={m}: not flat on the rho-ball at {int(x)}", (int(ball[i]), int(ball[j])))
        worst_ball = max(worst_ball, float(lip))
        near = np.nonzero((d[x] > 0) & (d[x] <= inv + tol))[0]
        q = _ratios(df[x, near], d[x, near]) if len(near) else np.array([])
        if not len(q) or q.max() < delta0 - tol:
            raise ZahorskiError(f"m={m}: no variation witness within 1/m of point {int(x)}", (int(x),))
        j = int(np.argmax(q))
        wits.append(int(near[j]))
        worst_wit = min(worst_wit, float(q[j]))
    return FlatMember(int(m), f, rho, worst_ball, worst_wit, tuple(wits))


def flat_family(space: Sample, S: Sequence[int], L, delta0, functions: Mapping[int, tuple[Sequence, object]], tol=None) -> FlatFamily:
    """Audit user-supplied ``{m: (values, rho_m)}``; any failing member raises."""
    members = {int(m): audit_flat(space, S, v, m, r, L, delta0, tol) for m, (v, r) in sorted(functions.items())}
    return FlatFamily(space, tuple(sorted(int(i) for i in S)), L, delta0, members)


def cantor_points(level: int) -> list[Fraction]:
    lefts = [Fraction(0)]
    for k in range(1, level + 1):
        lefts = lefts + [x + 2 * Fraction(1, 3**k) for x in lefts]
    w = Fraction(1, 3**level)
    return sorted(set(lefts) | {x + w for x in lefts})


def _ceil_log3(m: int) -> int:
    g, p = 0, 1
    while p < m:
        p *= 3
        g += 1
    return g


def cantor_generation(m: int, level: int) -> int:
    return max(_ceil_log3(m), level + 1)


def cantor_rho(level: int) -> Callable[[int], Fraction]:
    return lambda m: Fraction(1, 2 * 3 ** cantor_generation(m, level))


def cantor_flat_family(
    level: int,
    delta0,
    L,
    ms: Sequence[int] = (3, 9, 27),
    max_generation: int = 120,
) -> FlatFamily:
    """Flat family on the level-``level`` middle-thirds endpoints, exactly.

    For ``m`` let ``w = 3^-g`` with ``g = max(ceil(log3 m), level + 1)`` and
    ``rho = w/2``; then ``f_m = L max(0, dist(., S) - rho)`` is a sum of tent
    bumps inside the gaps, vanishes on ``B(S, rho)`` and rises to
    ``L w/2`` at distance ``w`` inside each point's adjacent gap. The sample
    is ``S`` together with, for every ``x`` and ``m``, the witness at
    distance ``w`` and the probe at distance ``rho`` on the gap side of
    ``x``, plus the gap midpoints.
    """
    delta0, L = exact(delta0), exact(L)
    if not (0 < delta0 <= 1):
        raise ZahorskiError("delta0 must lie in (0, 1]")
    if delta0 > L / 2:
        raise ZahorskiError(f"delta0={delta0} exceeds half the slope budget L={L}")
    if level < 1:
        raise ZahorskiError("cantor level must be at least 1")
    S = cantor_points(level)
    gens = {}
    for m in sorted({int(m) for m in ms}):
        if m < 1:
            raise ZahorskiError("m must be a positive integer")
        g = cantor_generation(m, level)
        if g > max_generation:
            raise ZahorskiError(f"resolution exhausted: m={m} needs generation {g} > {max_generation}")
        gens[m] = g
    pts = set(S)
    for i in range(1, len(S) - 1, 2):
        pts.add((S[i] + S[i + 1]) / 2)
    for i, x in enumerate(S):
        side = -1 if i % 2 == 0 else 1
        for g in gens.values():
            w = Fraction(1, 3**g)
            pts.add(x + side * w)
            pts.add(x + side * w / 2)
    coords = sorted(pts)
    pos = {c: k for k, c in enumerate(coords)}
    S_idx = [pos[x] for x in S]
    weights = np.zeros(len(coords))
    weights[S_idx] = 1.0 / len(S)
    sample = LineSample(tuple(coords), weights)
    dS = _dist_to(sample, np.asarray(S_idx))
    members = {}
    for m, g in gens.items():
        rho = Fraction(1, 2 * 3**g)
        vals = np.array([L * max(Fraction(0), r - rho) for r in dS], dtype=object)
        members[m] = audit_flat(sample, S_idx, vals, m, rho, L, delta0)
    max_m = 3**max_generation
    return FlatFamily(sample, tuple(S_idx), L, delta0, members, cantor_rho(level), max_m)


def cantor_schedule_family(level: int, delta0, L, alpha, K: int | None = None, max_generation: int = 120) -> tuple[Schedule, FlatFamily]:
    """Plan the schedule with the Cantor flatness radii, then build the family it needs."""
    def feasible(m: int) -> bool:
        return cantor_generation(m, level) <= max_generation

    sched = plan_schedule(alpha, L, cantor_rho(level), K, feasible=feasible)
    return sched, cantor_flat_family(level, delta0, L, sched.m, max_generation)


# --- independent functions ------------------------------------------------


@dataclass(frozen=True, eq=False)
class IndependentResult:
    psi: tuple[np.ndarray, ...] = field(repr=False)
    S_prime: tuple[int, ...]
    schedule: Schedule
    truncations: tuple[Truncation, ...] = field(repr=False)
    certificate: dict
    ok: bool

    @property
    def phi(self) -> np.ndarray:
        """Sum of all truncated levels."""
        return sum(self.psi[1:], self.psi[0])

    def psi_csv(self, ids: Sequence[str]) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["id"] + [f"psi{j}" for j in range(len(self.psi))])
        for i, pid in enumerate(ids):
            wr.writerow([pid] + [repr(float(p[i])) for p in self.psi])
        return buf.getvalue()


def alpha_cap(delta0, L) -> float:
    d, L = float(delta0), float(L)
    return min(0.5 * math.sqrt(d * L / (1 + d)), 0.5 * d)


def _check_alpha(alpha: Fraction, delta0: Fraction, L: Fraction) -> None:
    if not (alpha > 0 and 4 * alpha**2 * (1 + delta0) < delta0 * L and 2 * alpha < delta0):
        raise ZahorskiError(
            f"alpha={float(alpha)} must lie in (0, {alpha_cap(delta0, L):.6g}) for delta0={float(delta0)}, L={float(L)}"
        )


def lambda_grid(M: int, levels: Sequence[float] = LAMBDA_LEVELS) -> list[tuple[Fraction, ...]]:
    """Coefficient vectors over ``levels``^M with ``max |lambda_i| = 1``."""
    vals = [exact(v) for v in levels]
    out = [()]
    for _ in range(M):
        out = [p + (v,) for p in out for v in vals]
    return [p for p in out if max(abs(v) for v in p) == 1]


def _variation(space: Sample, x: int, values: np.ndarray, radius, tol):
    d = space.dist[x]
    near = np.nonzero((d > 0) & (d <= radius + tol))[0]
    if not len(near):
        return 0, -1
    q = np.abs(values[near] - values[x]) / d[near]
    j = int(np.argmax(q))
    return q[j], int(near[j])


def build_independent(
    space: Sample,
    S: Sequence[int],
    family: FlatFamily,
    M: int,
    alpha,
    K: int | None = None,
    tol=None,
    lambdas: Sequence[float] = LAMBDA_LEVELS,
) -> IndependentResult:
    """Truncate the scheduled flat functions and sum them by residue class mod ``M``.

    Certificates: (a) every ``psi_j`` has sample Lipschitz constant at most
    ``3(L + alpha + q(1 + alpha/64))`` with ``q = (alpha^2/L)/(1 - alpha^2/L)``;
    (b) at each point of ``S'`` and each sampled ``lambda``, the variation
    of ``sum lambda_j psi_j`` within ``1/m_{K-M+1}`` is at least
    ``delta0 - q - alpha - tail(K)``. ``S'`` is the intersection of the
    truncation sets over all levels.
    """
    ex = _is_exact(space)
    tol = _tol(tol, ex)
    if M < 1:
        raise ZahorskiError("M must be a positive integer")
    alpha = exact(alpha)
    L, delta0 = exact(family.L), exact(family.delta0)
    _check_alpha(alpha, delta0, L)
    Sa = _index_set(S, space.size)
    if tuple(int(i) for i in Sa) != tuple(family.S):
        raise ZahorskiError("the family was audited on a different set S")
    available = None if family.rho_rule is not None else sorted(family.members)
    sched = plan_schedule(alpha, L, family.rho, K, available, family.feasible)
    truncs = []
    for k in range(sched.K):
        m = sched.m[k]
        if m not in family.members:
            raise ZahorskiError(f"schedule infeasible at level {k + 1}: the sample carries no flat function for m={m}")
        tr = truncate(space, family.members[m].values, Sa, sched.h[k], sched.eps[k], L, tol)
        truncs.append(tr)
    zero = np.array([Fraction(0)] * space.size, dtype=object) if ex else np.zeros(space.size)
    psi = [zero.copy() for _ in range(M)]
    for k, tr in enumerate(truncs, start=1):
        psi[k % M] = psi[k % M] + tr.g
    Sp = set(int(i) for i in Sa)
    for tr in truncs:
        Sp &= set(tr.S_prime)
    Sp = tuple(sorted(Sp))

    lip_bound = _num(sched.lip_bound(), ex)
    lips = [_ratios(_pairs(p), space.dist).max() for p in psi]
    lip_ok = [bool(v <= lip_bound + tol) for v in lips]

    lower = _num(sched.lower_bound(delta0) - sched.tail(), ex)
    window = _num(Fraction(1, sched.m[max(sched.K - M, 0)]), ex)
    lam = lambda_grid(M, lambdas)
    worst = None
    failures = []
    for x in Sp:
        for vec in lam:
            comb = sum((_num(c, ex) * p for c, p in zip(vec, psi) if c != 0), zero)
            v, y = _variation(space, x, comb, window, tol)
            if worst is None or v < worst[0]:
                worst = (v, x, vec, y)
            if v < lower - tol:
                failures.append({"point": space.ids[x], "lambda": [float(c) for c in vec], "variation": float(v)})
    mass_S = float(space.weights[Sa].sum())
    cert = {
        "lip_bound": float(sched.lip_bound()),
        "lip_measured": [float(v) for v in lips],
        "lip_ok": lip_ok,
        "lower_bound": float(sched.lower_bound(delta0)),
        "tail": float(sched.tail()),
        "window": float(window),
        "min_variation": None if worst is None else float(worst[0]),
        "lambda_count": len(lam),
        "lower_failures": failures,
        "S_prime_size": len(Sp),
        "S_prime_mass_fraction": float(space.weights[list(Sp)].sum()) / mass_S if mass_S > 0 else 1.0,
        "mass_bound_product": float(sched.mass_bound()),
        "schedule_problems": sched.check(),
        "exact": ex,
    }
    ok = all(lip_ok) and not failures and bool(Sp)
    return IndependentResult(tuple(psi), Sp, sched, tuple(truncs), cert, ok)


def cantor_independent(level: int, delta0, L, alpha, M: int, K: int | None = None, tol=None) -> tuple[IndependentResult, FlatFamily]:
    sched, fam = cantor_schedule_family(level, delta0, L, alpha, K)
    res = build_independent(fam.space, fam.S, fam, M, alpha, sched.K, tol)
    return res, fam


# --- Lip-lip violation ----------------------------------------------------


def _window_variation(d: np.ndarray, df: np.ndarray, lo, hi, tol):
    # sup over r in (lo, hi] of max_{d <= r} |df| / r
    inside = d <= lo + tol
    best = df[inside].max() / lo if inside.any() else 0
    for r in sorted(set(d[(d > lo + tol) & (d <= hi + tol)].tolist())):
        v = df[d <= r + tol].max() / r
        if v > best:
            best = v
    return best


def liplip_violation_report(
    space: Sample,
    S_prime: Sequence[int],
    phi: Sequence,
    schedule: Schedule,
    delta0,
    tol=None,
) -> dict:
    """Finest-window ``biglip`` against the variation over the windows ``(alpha rho/2, rho]``.

    For each ``x`` in ``S'`` the first is the largest quotient over
    ``0 < d(x, y) <= 1/m_K``; the second is the largest ``varlip(x, r)`` for
    ``r`` in any window ``(alpha/2 rho_{m_s}, rho_{m_s}]``. Both are checked
    against their bounds and their ratio is tabulated.
    """
    ex = _is_exact(space)
    tol = _tol(tol, ex)
    phi = _vec(phi, ex)
    lower = _num(schedule.lower_bound(delta0) - schedule.tail(), ex)
    upper = _num(schedule.remark_bound(), ex)
    fine = _num(Fraction(1, schedule.m[-1]), ex)
    half_alpha = _num(schedule.alpha / 2, ex)
    rows = []
    for x in S_prime:
        big, _ = _variation(space, x, phi, fine, tol)
        d = space.dist[x]
        df = np.abs(phi - phi[x])
        cap = 0
        for rho in schedule.rho:
            rho = _num(rho, ex)
            cap = max(cap, _window_variation(d, df, half_alpha * rho, rho, tol))
        ratio = float(big / cap) if cap > 0 else math.inf
        rows.append(
            {
                "point": space.ids[x],
                "biglip": float(big),
                "window_variation": float(cap),
                "ratio": None if math.isinf(ratio) else ratio,
                "unbounded_ratio": math.isinf(ratio),
                "lower_ok": bool(big >= lower - tol),
                "remark_ok": bool(cap <= upper + tol),
            }
        )
    ratios = [math.inf if r["unbounded_ratio"] else r["ratio"] for r in rows]
    return {
        "lower_bound": float(schedule.lower_bound(delta0)),
        "tail": float(schedule.tail()),
        "remark_bound": float(schedule.remark_bound()),
        "rows": rows,
        "min_ratio": None if not rows or math.isinf(min(ratios)) else min(ratios),
        "ok": all(r["lower_ok"] and r["remark_ok"] and (r["unbounded_ratio"] or r["ratio"] > 1) for r in rows),
    }
