"""Strip covers and the integrated approximant of a scalar projection.

Cylinder samples are triples ``(z, v, t)``: a base point index ``z``, a
transverse vector ``v`` and a height ``t``. Strips are stored by the values
of their lower boundary at every sample's base position ``(z, v)``, one row
per strip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poset import build_chain_order, is_antichain, longest_chain, mirsky_decompose, ChainPoset
from .space import DEFAULT_TOL, FiniteMetricSpace, greedy_net

LAMBDA_CANDIDATES = 1.0 + 0.5 * np.arange(1, 65) / 65.0
NON_NULL_RATIO = 0.5


class ApproxError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Cylinder:
    space: FiniteMetricSpace = field(repr=False)
    z: np.ndarray
    v: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=int)
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float).reshape(len(t), -1)
        if len(z) != len(t):
            raise ApproxError("cylinder samples need one base point per height")
        if np.any(t < -DEFAULT_TOL):
            raise ApproxError("cylinder heights must be nonnegative")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "t", t)

    @property
    def height(self) -> float:
        return float(self.t.max()) if len(self.t) else 0.0

    def __len__(self) -> int:
        return len(self.t)

    def distances(self) -> np.ndarray:
        """Sample metric: max of base distance, transverse norm and height gap."""
        d = np.maximum(self.space.dist[np.ix_(self.z, self.z)], np.abs(self.t[:, None] - self.t[None, :]))
        if self.v.shape[1]:
            d = np.maximum(d, _pairwise_norm(self.v))
        return d


def _pairwise_norm(v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)


@dataclass(frozen=True)
class StripMetric:
    """``d = delta·d(z, z') + cot(alpha)·|v - v'|`` on the base and ``D = max(|Δt|, d)``.

    With ``transverse=False`` (the scalar case) the cotangent term is dropped.
    """

    delta: float
    alpha: float
    transverse: bool = True

    @property
    def cot(self) -> float:
        return 1.0 / math.tan(self.alpha) if self.transverse else 0.0

    @property
    def unit(self) -> float:
        """``delta + cot(alpha) + 1`` (cotangent dropped in the scalar case)."""
        return self.delta + self.cot + 1.0

    def width(self, n: int) -> float:
        return 2.0 * self.unit / n

    def bound(self, m: int, n: int) -> float:
        return 3.0 * self.unit * m / n

    def base(self, cyl: Cylinder) -> np.ndarray:
        d = self.delta * cyl.space.dist[np.ix_(cyl.z, cyl.z)]
        if self.transverse and cyl.v.shape[1]:
            d = d + self.cot * _pairwise_norm(cyl.v)
        return d

    def full(self, cyl: Cylinder) -> np.ndarray:
        return np.maximum(np.abs(cyl.t[:, None] - cyl.t[None, :]), self.base(cyl))


@dataclass(frozen=True, eq=False)
class Strip:
    """Open region ``lower(y) < t < lower(y) + width`` above every base position."""

    lower: np.ndarray
    h: float
    lam: float | None = None

    @property
    def width(self) -> float:
        return self.h * (1.0 if self.lam is None else self.lam)


def lipschitz_excess(values: np.ndarray, d: np.ndarray) -> tuple[float, tuple[int, int]]:
    """Largest ``|f(x) - f(y)| - d(x, y)`` and the pair attaining it."""
    ex = np.abs(values[:, None] - values[None, :]) - d
    k = int(np.argmax(ex))
    i, j = divmod(k, len(values))
    return float(ex[i, j]), (int(i), int(j))


def mcshane_extend(
    anchors: Sequence[int], anchor_values: Sequence[float], d: np.ndarray, tol: float = DEFAULT_TOL
) -> np.ndarray:
    """Smallest-slope upper extension ``f(x) = min_p f(p) + d(x, p)``.

    ``d`` is the full distance matrix; anchors must be 1-Lipschitz among
    themselves, otherwise the worst pair is reported.
    """
    a = np.asarray(anchors, dtype=int)
    vals = np.asarray(anchor_values, dtype=float)
    if len(a) == 0:
        raise ApproxError("McShane extension needs at least one anchor")
    excess, (i, j) = lipschitz_excess(vals, d[np.ix_(a, a)])
    if excess > tol:
        raise ApproxError(
            f"anchor values are not 1-Lipschitz: points {int(a[i])} and {int(a[j])} exceed by {excess:.3g}"
        )
    return (vals[None, :] + d[:, a]).min(axis=1)


def antichain_to_strip(
    poset: ChainPoset,
    antichain: Sequence[int],
    anchor_index: Sequence[int],
    dbase: np.ndarray,
    h: float,
    centered: bool = True,
    tol: float = DEFAULT_TOL,
) -> Strip:
    """Strip over the graph of an antichain.

    ``anchor_index[k]`` is the sample position of poset node ``k``. The
    antichain's heights are extended to all samples by McShane extension with
    respect to ``dbase``. A centred strip has lower boundary ``g - h/2`` so
    that it contains every height within ``h/2`` of the graph.
    """
    members = list(antichain)
    if not is_antichain(poset, members):
        raise ApproxError("strip input contains a comparable pair")
    pos = [int(anchor_index[k]) for k in members]
    g = mcshane_extend(pos, poset.t[members], dbase, tol)
    return Strip(g - h / 2 if centered else g, float(h))


def sort_strips(lowers: np.ndarray) -> np.ndarray:
    """Min/max insertion cascade giving a pointwise nondecreasing family.

    Each new row ``f`` is merged into the sorted rows with ``G_0 = f``,
    ``F_i = min(f_i, G_{i-1})``, ``G_i = max(f_i, G_{i-1})`` and the last row
    ``G_N``.
    """
    rows = np.asarray(lowers, dtype=float)
    if rows.shape[0] <= 1:
        return rows.copy()
    done = [rows[0].copy()]
    for new in rows[1:]:
        g = new.copy()
        merged = []
        for f in done:
            merged.append(np.minimum(f, g))
            g = np.maximum(f, g)
        merged.append(g)
        done = merged
    return np.array(done)


def union_indicator(lowers: np.ndarray, widths, t: np.ndarray) -> np.ndarray:
    """``out[k, p]``: whether height ``t[k]`` lies in some open strip above base position ``p``."""
    lo = np.asarray(lowers)[:, None, :]
    w = np.broadcast_to(np.asarray(widths, dtype=float), (lo.shape[0],))[:, None, None]
    tt = np.asarray(t)[None, :, None]
    return ((tt > lo) & (tt < lo + w)).any(axis=0)


@dataclass(frozen=True, eq=False)
class DisjointStrips:
    lower: np.ndarray
    lambdas: np.ndarray
    h: float
    boundary_mass: float
    covered_mass: float
    uncovered_mass: float

    @property
    def widths(self) -> np.ndarray:
        return self.lambdas * self.h

    def __len__(self) -> int:
        return len(self.lambdas)


def disjointify(
    sorted_lowers: np.ndarray,
    h: float,
    t: np.ndarray,
    mass: np.ndarray,
    tol: float = DEFAULT_TOL,
) -> DisjointStrips:
    """Push sorted strips apart: ``g_1 = f_1``, ``g_j = max(g_{j-1} + lam_{j-1} h, f_j)``.

    ``t`` and ``mass`` describe the measure on the samples (height of each
    sample, and its mass; zero mass outside the set of interest). Each
    ``lam_j`` is the first of 64 equispaced values in ``(1, 3/2)`` that
    minimises the mass on the upper boundary of strip ``j``.
    """
    f = np.asarray(sorted_lowers, dtype=float)
    t = np.asarray(t, dtype=float)
    mass = np.asarray(mass, dtype=float)
    if f.ndim != 2:
        raise ApproxError("strip lowers must be a 2-D array")
    if f.shape[0] > 1 and np.any(np.diff(f, axis=0) < -tol):
        raise ApproxError("disjointify needs strips sorted pointwise")
    rows, lams = [], []
    boundary = 0.0
    for j in range(f.shape[0]):
        g = f[j].copy() if j == 0 else np.maximum(rows[-1] + lams[-1] * h, f[j])
        upper = g[None, :] + LAMBDA_CANDIDATES[:, None] * h
        on = np.abs(t[None, :] - upper) <= tol
        atom = (on * mass[None, :]).sum(axis=1)
        k = int(np.argmin(atom))
        rows.append(g)
        lams.append(float(LAMBDA_CANDIDATES[k]))
        boundary += float(atom[k])
    lower = np.array(rows).reshape(f.shape)
    lam = np.array(lams)
    inside = strip_membership(lower, lam * h, t) >= 0
    covered = float(mass[inside].sum())
    return DisjointStrips(lower, lam, float(h), boundary, covered, float(mass.sum()) - covered)


def check_disjoint(lower: np.ndarray, widths: np.ndarray, tol: float = DEFAULT_TOL) -> None:
    if lower.shape[0] < 2:
        return
    gap = lower[1:] - (lower[:-1] + np.asarray(widths)[:-1, None])
    if gap.min() < -tol:
        j, p = np.unravel_index(int(np.argmin(gap)), gap.shape)
        raise ApproxError(f"strips {int(j)} and {int(j) + 1} overlap above sample {int(p)}")


def strip_membership(lower: np.ndarray, widths: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Index of the strip containing each sample ``(y_p, t_p)``, or -1."""
    n = lower.shape[1] if lower.ndim == 2 else len(t)
    out = np.full(n, -1, dtype=int)
    for j in range(lower.shape[0] - 1, -1, -1):
        inside = (t > lower[j]) & (t < lower[j] + widths[j])
        out[inside] = j
    return out


def tau_approximate(
    t: np.ndarray, lower: np.ndarray, widths: np.ndarray, base_level: float = 0.0, tol: float = DEFAULT_TOL
) -> np.ndarray:
    """``t`` minus the length of strip intervals inside ``(base_level, t)``, per sample.

    ``lower[j, p]`` is the lower boundary of strip ``j`` above sample ``p``.
    Strips must be sorted, disjoint and lie above ``base_level``.
    """
    t = np.asarray(t, dtype=float)
    lower = np.asarray(lower, dtype=float).reshape(-1, len(t))
    widths = np.asarray(widths, dtype=float)
    if lower.shape[0] == 0:
        return t.copy()
    check_disjoint(lower, widths, tol)
    if lower.min() < base_level - tol:
        raise ApproxError("a strip reaches below the cylinder floor")
    top = lower + widths[:, None]
    removed = np.clip(np.minimum(t[None, :], top) - np.maximum(lower, base_level), 0.0, None).sum(axis=0)
    return t - removed


def removed_offsets(widths: np.ndarray) -> np.ndarray:
    """``eta_j``: total width of the strips below strip ``j``."""
    return np.concatenate([[0.0], np.cumsum(widths)[:-1]]) if len(widths) else np.zeros(0)


# --- pipeline -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Approximation:
    values: np.ndarray
    tau_n: np.ndarray
    cylinder: Cylinder = field(repr=False)
    strips: DisjointStrips = field(repr=False)
    certificate: dict = field(default_factory=dict)


def embed(space: FiniteMetricSpace, f: np.ndarray, w: Sequence[float], lift: float = 0.0) -> tuple[Cylinder, float]:
    """Cylinder triples ``(x, transverse part of f(x), <w, f(x)>)``.

    Heights are shifted to start at ``lift``; the returned offset maps
    heights back to ``<w, f>``. Transverse coordinates use an orthonormal
    basis of the complement of ``w`` (the last rows of a QR factor).
    """
    vals = np.asarray(f, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    wv = np.asarray(w, dtype=float).ravel()
    if vals.shape != (space.size, wv.size):
        raise ApproxError(f"f must have shape ({space.size}, {wv.size}), got {vals.shape}")
    if abs(np.linalg.norm(wv) - 1.0) > 1e-9:
        raise ApproxError("direction w must be a unit vector")
    along = vals @ wv
    q = wv.size
    if q > 1:
        basis, _ = np.linalg.qr(np.column_stack([wv, np.eye(q)]))
        perp = basis[:, 1:q]
        v = vals @ perp
    else:
        v = np.zeros((space.size, 0))
    offset = float(along.min()) - lift if space.size else 0.0
    return Cylinder(space, np.arange(space.size), v, along - offset), offset


def _local_report(cyl, tau, member, metric, dbase, dfull, S, tol):
    report = []
    dz = cyl.space.dist[np.ix_(cyl.z, cyl.z)]
    for p in S:
        j = member[p]
        if j < 0:
            continue
        order = np.argsort(dfull[p], kind="stable")
        outside = order[member[order] != j]
        radius = float(dfull[p, outside[0]]) if len(outside) else float("inf")
        ball = order[(dfull[p, order] < radius) & (order != p)]
        dif = np.abs(tau[ball] - tau[p])
        db = dbase[p, ball]
        pos = db > 0
        c_strip = float((dif[pos] / db[pos]).max()) if pos.any() else 0.0
        dzb = dz[p, ball]
        posz = dzb > 0
        c_base = float((dif[posz] / dzb[posz]).max()) if posz.any() else 0.0
        report.append(
            {
                "pointId": cyl.space.ids[int(cyl.z[p])],
                "radius": radius,
                "constant": c_strip,
                "base_constant": c_base,
            }
        )
    return report


def onedim_approx(
    space: FiniteMetricSpace,
    S: Sequence[int],
    f: np.ndarray,
    w: Sequence[float],
    delta: float,
    alpha: float,
    n: int,
    tol: float = DEFAULT_TOL,
    local_audit: bool = True,
) -> Approximation:
    """Approximate ``<w, f>`` by a function that is ``d_{delta,alpha}``-Lipschitz near ``S``.

    Steps: embed into the cylinder, take a ``1/n``-net of the samples, keep
    the nodes within ``1/n`` of ``S``, order them, split into Mirsky levels,
    turn each level into a centred strip of width ``2(delta + cot(alpha) + 1)/n``,
    sort, disjointify and integrate.
    """
    if not delta > 0:
        raise ApproxError(f"delta must be positive, got {delta}")
    if not (0.0 < alpha < math.pi / 2):
        raise ApproxError(f"alpha must lie strictly inside (0, pi/2), got {alpha}")
    if n < 1:
        raise ApproxError(f"n must be a positive integer, got {n}")
    q = len(np.asarray(w).ravel())
    metric = StripMetric(delta, alpha, transverse=q > 1)
    h = metric.width(n)
    cyl, offset = embed(space, f, w, lift=h / 2)
    S = sorted({int(s) for s in S})
    mass = np.zeros(len(cyl))
    mass[S] = space.weights[S]
    dbase = metric.base(cyl)
    dfull = np.maximum(np.abs(cyl.t[:, None] - cyl.t[None, :]), dbase)
    rho = cyl.distances()
    notes = ["identity embedding: finite samples need no convex hull"]

    nodes: list[int] = []
    if S:
        net = greedy_net(rho, 1.0 / n, tol)
        near = rho[np.ix_(net, S)].min(axis=1) < 1.0 / n - tol
        nodes = [m for m, ok in zip(net, near) if ok]
    if nodes:
        na = np.asarray(nodes)
        poset = build_chain_order((cyl.z[na], cyl.v[na], cyl.t[na]), delta, alpha, space, tol)
        chain = longest_chain(poset)
        levels = mirsky_decompose(poset)
        anchor = [nodes[k] for k in poset.source]
        strips = [antichain_to_strip(poset, lv, anchor, dbase, h, True, tol) for lv in levels]
        lowers = sort_strips(np.array([s.lower for s in strips]))
        m_n = chain.length
    else:
        lowers = np.zeros((0, len(cyl)))
        m_n = 0
    for row in lowers:
        ex, pair = lipschitz_excess(row, dbase)
        if ex > tol:
            raise ApproxError(f"strip boundary fails the Lipschitz audit at samples {pair}")
    dis = disjointify(lowers, h, cyl.t, mass, tol)
    tau = tau_approximate(cyl.t, dis.lower, dis.widths, 0.0, tol)
    excess, pair = lipschitz_excess(tau, dfull)
    member = strip_membership(dis.lower, dis.widths, cyl.t)
    sup_error = float(np.abs(cyl.t - tau).max()) if len(tau) else 0.0
    bound = metric.bound(m_n, n)
    cert = {
        "M_n": int(m_n),
        "n": int(n),
        "h": h,
        "nodes": len(nodes),
        "sup_error": sup_error,
        "eta_total": float(dis.widths.sum()),
        "bound": bound,
        "bound_ok": bool(sup_error <= bound + tol),
        "global_lip_D": float(max(excess, 0.0) + 1.0) if len(tau) > 1 else 0.0,
        "global_lip_excess": float(excess) if len(tau) > 1 else 0.0,
        "global_lip_pair": list(pair),
        "global_lip_ok": bool(excess <= tol),
        "covered_mass": dis.covered_mass,
        "uncovered_mass": dis.uncovered_mass,
        "boundary_mass": dis.boundary_mass,
        "chain_ratio": m_n / n,
        "non_null_flag": bool(m_n / n >= NON_NULL_RATIO),
        "notes": notes,
    }
    if len(tau) > 1:
        ratio = np.abs(tau[:, None] - tau[None, :])
        pos = dfull > 0
        cert["global_lip_D"] = float((ratio[pos] / dfull[pos]).max()) if pos.any() else 0.0
    if local_audit:
        cert["local_lip_report"] = _local_report(cyl, tau, member, metric, dbase, dfull, S, tol)
    return Approximation(tau + offset, tau, cyl, dis, cert)
