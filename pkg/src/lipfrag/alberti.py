"""Discrete Alberti representations and the derivations they induce.

A representation is a finite list of fragments with probabilities ``P`` and,
for each fragment, a nonnegative mass at every position of its trace. It
represents the measure ``sum_j P_j nu_j``. The induced derivation of ``f`` at
a point is the mass-weighted average of ``(f∘γ)'`` over the fragments
passing through it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fragment import (
    ConeField,
    ConeSpec,
    Fragment,
    affine_reparametrize,
    bilipschitz_constants,
    check_direction_speed,
    cone_contains,
    directional_derivative,
    fragment_from_dict,
    make_fragment,
    metric_differential,
    shift_domain,
)
from .approx import embed
from .poset import build_chain_order, chain_to_fragment, longest_chain
from .space import DEFAULT_TOL, FiniteMetricSpace, restrict_measure

FINITE_MODEL_NOTE = "satisfied (finite model)"


class AlbertiError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AlbertiRep:
    fragments: tuple[Fragment, ...]
    probs: np.ndarray
    densities: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "fragments", tuple(self.fragments))
        p = np.array(self.probs, dtype=float).reshape(-1)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        dens = []
        for nu in self.densities:
            a = np.array(nu, dtype=float).reshape(-1)
            a.setflags(write=False)
            dens.append(a)
        object.__setattr__(self, "densities", tuple(dens))

    def __len__(self) -> int:
        return len(self.fragments)

    @property
    def space(self) -> FiniteMetricSpace | None:
        return self.fragments[0].space if self.fragments else None

    def point_density(self, j: int, size: int) -> np.ndarray:
        """Mass of fragment ``j`` at every space point."""
        out = np.zeros(size)
        np.add.at(out, np.asarray(self.fragments[j].trace), self.densities[j])
        return out

    def to_dict(self) -> dict:
        return {
            "fragments": [fr.to_dict() for fr in self.fragments],
            "probs": [float(p) for p in self.probs],
            "densities": [[float(x) for x in nu] for nu in self.densities],
        }


def make_rep(fragments: Sequence[Fragment], probs: Sequence[float], densities: Sequence[Sequence[float]]) -> AlbertiRep:
    """Validated constructor: probabilities sum to one, densities match traces."""
    rep = AlbertiRep(tuple(fragments), probs, tuple(densities))
    check_well_formed(rep)
    return rep


def check_well_formed(rep: AlbertiRep) -> None:
    if len(rep.probs) != len(rep.fragments) or len(rep.densities) != len(rep.fragments):
        raise AlbertiError("fragments, probabilities and densities must have equal counts")
    if len(rep.fragments):
        if np.any(rep.probs < 0):
            raise AlbertiError("probabilities must be nonnegative")
        if abs(rep.probs.sum() - 1.0) > 1e-12:
            raise AlbertiError(f"probabilities sum to {rep.probs.sum()!r}, not 1")
        spaces = {id(fr.space) for fr in rep.fragments}
        if len(spaces) != 1:
            raise AlbertiError("all fragments must live in one space")
    for j, (fr, nu) in enumerate(zip(rep.fragments, rep.densities)):
        if len(nu) != len(fr):
            raise AlbertiError(f"fragment {j}: {len(nu)} densities for a trace of length {len(fr)}")
        if np.any(nu < 0):
            raise AlbertiError(f"fragment {j} has a negative density")


def represented_measure(rep: AlbertiRep, size: int) -> np.ndarray:
    total = np.zeros(size)
    for j in range(len(rep)):
        total += rep.probs[j] * rep.point_density(j, size)
    return total


@dataclass(frozen=True)
class ResidualReport:
    residual: np.ndarray
    max_residual: float
    total_residual: float
    ok: bool
    tol: float
    conditions: dict = field(default_factory=dict)


def validate_rep(space: FiniteMetricSpace, rep: AlbertiRep, tol: float = 1e-12) -> ResidualReport:
    """Pointwise ``|mu(x) - sum_j P_j nu_j(x)|``; passes when the maximum is at most ``tol``."""
    check_well_formed(rep)
    for fr in rep.fragments:
        if fr.space is not space and fr.space.size != space.size:
            raise AlbertiError("representation lives on a different space")
    res = np.abs(space.weights - represented_measure(rep, space.size))
    mx = float(res.max()) if len(res) else 0.0
    return ResidualReport(
        res,
        mx,
        float(res.sum()),
        mx <= tol,
        tol,
        {
            "probability": "sum of P is 1",
            "absolute_continuity": FINITE_MODEL_NOTE,
            "measurability": FINITE_MODEL_NOTE,
        },
    )


# --- derivations ----------------------------------------------------------


@dataclass(frozen=True)
class DerivationField:
    values: np.ndarray
    defined: np.ndarray
    excluded: tuple[int, ...]
    bound: float
    pairing: float | np.ndarray | None = None
    pairing_bound: float | None = None


def norm_bound(rep: AlbertiRep) -> float:
    """Largest upper biLipschitz constant among the fragments."""
    vals = [bilipschitz_constants(fr)[1] for fr in rep.fragments if len(fr) > 1]
    return max(vals) if vals else 0.0


def sample_lipschitz(space: FiniteMetricSpace, f: np.ndarray) -> float:
    vals = np.asarray(f, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    diff = np.linalg.norm(vals[:, None, :] - vals[None, :, :], axis=-1)
    pos = space.dist > 0
    return float((diff[pos] / space.dist[pos]).max()) if pos.any() else 0.0


def _weighted_sum(space: FiniteMetricSpace, rep: AlbertiRep, per_fragment) -> np.ndarray:
    """``sum_j P_j * value_j(position) * nu_j(position)`` accumulated at trace points."""
    acc = None
    for j, fr in enumerate(rep.fragments):
        vals = per_fragment(fr)
        w = rep.probs[j] * rep.densities[j]
        contrib = vals * (w if vals.ndim == 1 else w[:, None])
        if acc is None:
            acc = np.zeros((space.size,) + contrib.shape[1:])
        np.add.at(acc, np.asarray(fr.trace), contrib)
    return acc


def _ratio(space: FiniteMetricSpace, acc, scalar_shape) -> tuple[np.ndarray, np.ndarray]:
    mu = space.weights
    defined = mu > 0
    if acc is None:
        acc = np.zeros((space.size,) + scalar_shape)
    out = np.full(acc.shape, np.nan)
    out[defined] = acc[defined] / (mu[defined] if acc.ndim == 1 else mu[defined, None])
    return out, defined


def derivation_apply(
    space: FiniteMetricSpace,
    rep: AlbertiRep,
    f: np.ndarray,
    g: np.ndarray | None = None,
) -> DerivationField:
    """``Df(x) = sum_j P_j (f∘γ_j)'(x) nu_j(x) / mu(x)`` where ``mu(x) > 0``.

    Points of zero mass are left undefined (NaN) and listed. When ``g`` is
    given the pairing ``sum_x g(x) Df(x) mu(x)`` is computed from the
    fragment sums, together with the bound ``C Lip(f) |g|_1``.
    """
    f = np.asarray(f, dtype=float)
    acc = _weighted_sum(space, rep, lambda fr: directional_derivative(fr, f) if len(fr) > 1 else np.zeros((1,) + f.shape[1:]))
    vals, defined = _ratio(space, acc, f.shape[1:])
    C = norm_bound(rep)
    pairing = pairing_bound = None
    if g is not None:
        g = np.asarray(g, dtype=float)
        pairing = 0.0
        for j, fr in enumerate(rep.fragments):
            if len(fr) < 2:
                continue
            d = directional_derivative(fr, f)
            gw = g[np.asarray(fr.trace)] * rep.densities[j] * rep.probs[j]
            pairing = pairing + (gw @ d if d.ndim == 1 else gw @ d)
        pairing_bound = C * sample_lipschitz(space, f) * float(np.abs(g) @ space.weights)
    excluded = tuple(int(i) for i in np.nonzero(~defined)[0])
    return DerivationField(vals, defined, excluded, C, pairing, pairing_bound)


def effective_speed(space: FiniteMetricSpace, rep: AlbertiRep) -> DerivationField:
    """``sigma(x) = sum_j P_j md_j(x) nu_j(x) / mu(x)`` where ``mu(x) > 0``."""
    acc = _weighted_sum(space, rep, lambda fr: metric_differential(fr) if len(fr) > 1 else np.zeros(1))
    vals, defined = _ratio(space, acc, ())
    excluded = tuple(int(i) for i in np.nonzero(~defined)[0])
    return DerivationField(vals, defined, excluded, norm_bound(rep))


@dataclass(frozen=True)
class TheoremCheck:
    certified: bool
    uncertified_fragments: tuple[int, ...]
    failing_points: tuple[int, ...]
    ok: bool
    detail: dict = field(default_factory=dict)


def check_directional_cone(
    space: FiniteMetricSpace,
    rep: AlbertiRep,
    f: np.ndarray,
    cones: ConeField | ConeSpec,
    tol: float = 1e-9,
) -> TheoremCheck:
    """If every fragment runs in its cone's direction, ``Df`` lies in the closed cone.

    ``ok`` is false only when all fragments certify and some point fails.
    """
    if isinstance(cones, ConeSpec):
        cones = ConeField(cones)
    zero = np.zeros(space.size)
    bad_frags = []
    for j, fr in enumerate(rep.fragments):
        if len(fr) < 2:
            continue
        rep_j = check_direction_speed(fr, f, cones, 0.0, zero, tol)
        weights_here = rep.densities[j] > 0
        if not rep_j.direction_ok[weights_here].all():
            bad_frags.append(j)
    field_ = derivation_apply(space, rep, f)
    vals = field_.values if field_.values.ndim == 2 else field_.values[:, None]
    failing = []
    for x in np.nonzero(field_.defined)[0]:
        c = cones(int(x))
        closed = ConeSpec(c.axis, c.angle, closed=True)
        if not cone_contains(closed, vals[x], tol):
            failing.append(int(x))
    certified = not bad_frags
    return TheoremCheck(certified, tuple(bad_frags), tuple(failing), not (certified and failing))


def check_speed_bound(
    space: FiniteMetricSpace,
    rep: AlbertiRep,
    f: np.ndarray,
    delta: float | np.ndarray,
    tol: float = 1e-9,
) -> TheoremCheck:
    """If every fragment has ``f``-speed at least ``delta``, then ``Df >= delta·sigma - tol``."""
    f = np.asarray(f, dtype=float)
    dl = np.broadcast_to(np.asarray(delta, dtype=float), (space.size,))
    bad_frags = []
    for j, fr in enumerate(rep.fragments):
        if len(fr) < 2:
            continue
        tr = np.asarray(fr.trace)
        ok = directional_derivative(fr, f) >= dl[tr] * metric_differential(fr) - tol
        if not ok[rep.densities[j] > 0].all():
            bad_frags.append(j)
    Df = derivation_apply(space, rep, f)
    sig = effective_speed(space, rep)
    slack = np.where(Df.defined, Df.values - dl * sig.values, np.nan)
    failing = tuple(int(x) for x in np.nonzero(Df.defined & (np.nan_to_num(slack, nan=0.0) < -tol))[0])
    certified = not bad_frags
    return TheoremCheck(
        certified,
        tuple(bad_frags),
        failing,
        not (certified and failing),
        {"slack": slack},
    )


# --- algebra --------------------------------------------------------------


def reparametrize(rep: AlbertiRep, a: float, b: float = 0.0) -> AlbertiRep:
    """Compose every fragment with ``s -> a s + b``; the derivation is multiplied by ``a``."""
    if a == 0:
        raise AlbertiError("reparametrization slope must be nonzero")
    frags = [affine_reparametrize(fr, a, b) for fr in rep.fragments]
    dens = [nu[::-1] if a < 0 else nu for nu in rep.densities]
    return AlbertiRep(tuple(frags), rep.probs, tuple(dens))


def restrict_rep(rep: AlbertiRep, subset: Sequence[int]) -> AlbertiRep:
    """Keep fragment masses on ``subset`` only; represents the restricted measure."""
    keep = set(int(i) for i in subset)
    dens = []
    for fr, nu in zip(rep.fragments, rep.densities):
        mask = np.array([i in keep for i in fr.trace], dtype=bool)
        dens.append(np.where(mask, nu, 0.0))
    return AlbertiRep(rep.fragments, rep.probs, tuple(dens))


def window_width(*reps: AlbertiRep) -> float:
    """Width of the domain windows: 1, or the longest domain extent if larger."""
    ext = [fr.domain[-1] - fr.domain[0] for r in reps for fr in r.fragments]
    return max([1.0] + ext)


def place_in_window(rep: AlbertiRep, k: int, width: float) -> AlbertiRep:
    """Translate every domain to start at ``2 k width`` (window ``[2k w, (2k+1) w]``)."""
    frags = [shift_domain(fr, 2 * k * width - fr.domain[0]) for fr in rep.fragments]
    return AlbertiRep(tuple(frags), rep.probs, rep.densities)


def _concat(parts: Sequence[tuple[AlbertiRep, float, float]]) -> AlbertiRep:
    """Mixture ``sum_k weight_k P_k`` with densities multiplied by ``scale_k``."""
    frags, probs, dens = [], [], []
    for rep, weight, scale in parts:
        frags.extend(rep.fragments)
        probs.extend(weight * rep.probs)
        dens.extend(scale * nu for nu in rep.densities)
    return AlbertiRep(tuple(frags), np.array(probs), tuple(dens))


def _support(space_size: int, rep: AlbertiRep) -> np.ndarray:
    return represented_measure(rep, space_size) > 0


def glue_reps(reps: Sequence[AlbertiRep], space_size: int | None = None) -> AlbertiRep:
    """Representation of the sum of measures carried by reps with disjoint supports.

    Part ``k`` (from 1) gets probability weight ``2^-k`` and density factor
    ``2^k``, then probabilities are renormalised by ``(1 - 2^-K)^-1`` and the
    densities compensated so the represented measure is unchanged.
    """
    reps = [r for r in reps]
    if not reps:
        raise AlbertiError("nothing to glue")
    if space_size is None:
        spaces = [r.space for r in reps if r.space is not None]
        space_size = spaces[0].size if spaces else 0
    seen = np.zeros(space_size, dtype=bool)
    for k, r in enumerate(reps):
        sup = _support(space_size, r)
        clash = np.nonzero(sup & seen)[0]
        if len(clash):
            raise AlbertiError(f"supports overlap at point {int(clash[0])} (part {k})")
        seen |= sup
    K = len(reps)
    z = 1.0 - 2.0**-K
    return _concat([(r, 2.0 ** -(k + 1) / z, 2.0 ** (k + 1) * z) for k, r in enumerate(reps)])


def indicator_combine(rep: AlbertiRep, subset: Sequence[int]) -> AlbertiRep:
    """Representation of the same measure whose derivation is ``chi_U D``.

    Three blocks in separate domain windows: the restriction to the
    complement, its reversal (slope -1), and the restriction to ``U``. They
    are mixed with weights 1/4, 1/4, 1/2 and doubled densities, so the first
    two derivations cancel.
    """
    space = rep.space
    if space is None:
        return rep
    U = sorted({int(i) for i in subset})
    comp = sorted(set(range(space.size)) - set(U))
    w = window_width(rep)
    a1 = place_in_window(restrict_rep(rep, comp), 0, w)
    a2 = place_in_window(reparametrize(a1, -1.0, 0.0), 1, w)
    a3 = place_in_window(restrict_rep(rep, U), 2, w)
    return _concat([(a1, 0.25, 2.0), (a2, 0.25, 2.0), (a3, 0.5, 2.0)])


def sum_reps(reps: Sequence[AlbertiRep]) -> AlbertiRep:
    """Representation whose derivation is the sum of the given ones.

    Each rep goes to its own domain window, the probabilities are averaged,
    and the average is rescaled by ``s -> m s``.
    """
    reps = list(reps)
    if not reps:
        raise AlbertiError("nothing to sum")
    m = len(reps)
    w = window_width(*reps)
    mixed = _concat([(place_in_window(r, k, w), 1.0 / m, 1.0) for k, r in enumerate(reps)])
    return reparametrize(mixed, float(m), 0.0)


def dyadic_digits(lam: np.ndarray, M: float, K: int) -> np.ndarray:
    """``digits[n-1, x]``: the ``n``-th binary digit of ``lam(x)/M``."""
    scaled = np.floor(np.asarray(lam, dtype=float) / M * 2.0**K).astype(np.int64)
    return np.array([(scaled >> (K - n)) & 1 for n in range(1, K + 1)])


def dyadic_floor(lam: np.ndarray, M: float, K: int) -> np.ndarray:
    return np.floor(np.asarray(lam, dtype=float) / M * 2.0**K) * M / 2.0**K


def scale_rep(rep: AlbertiRep, lam: np.ndarray, K: int, M: float | None = None) -> AlbertiRep:
    """Representation whose derivation is ``lam_K D`` with ``lam_K`` the depth-``K`` dyadic floor of ``lam``.

    ``lam`` takes values in ``[0, M)``. Level ``n`` uses the indicator
    combination for the set where the ``n``-th digit of ``lam/M`` is one,
    speeds it up by ``M`` and enters with probability ``2^-n``. The mixture
    is renormalised and slowed down by the same factor so the derivation is
    unchanged by the renormalisation.
    """
    space = rep.space
    lam = np.asarray(lam, dtype=float)
    if M is None:
        M = float(lam.max()) * 2 if lam.size and lam.max() > 0 else 1.0
    if K < 1:
        raise AlbertiError("depth must be at least 1")
    if np.any(lam < 0):
        raise AlbertiError("scaling function must be nonnegative")
    if np.any(lam >= M):
        raise AlbertiError(f"scaling function reaches {lam.max()} >= M = {M}")
    if space is None:
        return rep
    digits = dyadic_digits(lam, M, K)
    w = None
    levels = []
    for n in range(1, K + 1):
        Un = np.nonzero(digits[n - 1])[0]
        levels.append(reparametrize(indicator_combine(rep, Un), M, 0.0))
    w = window_width(*levels)
    z = 1.0 - 2.0**-K
    mixed = _concat([(place_in_window(r, n, w), 2.0 ** -(n + 1) / z, 1.0) for n, r in enumerate(levels)])
    return reparametrize(mixed, z, 0.0)


# --- construction and norm estimates -------------------------------------


@dataclass(frozen=True, eq=False)
class GreedyResult:
    rep: AlbertiRep
    coverage: float
    residual: tuple[int, ...]
    chains: tuple[tuple[int, ...], ...]


def greedy_build_rep(
    space: FiniteMetricSpace,
    f: np.ndarray,
    cone: ConeSpec,
    delta: float,
    target: float = 1.0,
    tol: float = DEFAULT_TOL,
) -> GreedyResult:
    """Cover the measure by longest chains of the order built from ``f`` and ``cone``.

    Nodes are the points with uncovered mass, at ``(x, transverse f(x), <w, f(x)>)``.
    Each extracted chain becomes a fragment parametrised by ``<w, f>`` and
    takes the uncovered mass along it; the loop stops at the coverage target
    or when only single-node chains remain. The result represents the
    covered part of the measure; ``residual`` lists points still carrying mass.
    """
    f = np.asarray(f, dtype=float)
    vals = f[:, None] if f.ndim == 1 else f
    cyl, _ = embed(space, vals, cone.axis)
    remaining = space.weights.copy()
    total = float(remaining.sum())
    covered = 0.0
    frags, masses, chains = [], [], []
    while total > 0 and covered < target * total - 1e-15:
        live = np.nonzero(remaining > 0)[0]
        if len(live) < 2:
            break
        poset = build_chain_order((live, cyl.v[live], cyl.t[live]), delta, cone.angle, space, tol)
        res = longest_chain(poset)
        if res.length < 2:
            break
        frag, _ = chain_to_fragment(poset, res.chain, space, tol)
        pts = [int(live[poset.source[k]]) for k in res.chain]
        frags.append(frag)
        masses.append(remaining[pts].copy())
        chains.append(tuple(pts))
        covered += float(remaining[pts].sum())
        remaining[pts] = 0.0
    k = len(frags)
    rep = AlbertiRep(tuple(frags), np.full(k, 1.0 / k) if k else np.zeros(0), tuple(k * m for m in masses))
    coverage = covered / total if total > 0 else 1.0
    return GreedyResult(rep, coverage, tuple(int(i) for i in np.nonzero(remaining > 0)[0]), tuple(chains))


def weaver_norm_estimate(
    space: FiniteMetricSpace, f: np.ndarray, pool: Sequence[Fragment], w: Sequence[float] | None = None
) -> np.ndarray:
    """Pointwise sup over pool fragments through ``x`` of ``|<w, (f∘γ)'>| / md``.

    Points not visited by any fragment (or only where ``md = 0``) get 0, so
    the estimate is a lower envelope tied to the pool.
    """
    f = np.asarray(f, dtype=float)
    est = np.zeros(space.size)
    for fr in pool:
        if len(fr) < 2:
            continue
        d = directional_derivative(fr, f)
        if d.ndim == 2:
            if w is None:
                raise AlbertiError("vector-valued f needs a direction w")
            d = d @ np.asarray(w, dtype=float)
        md = metric_differential(fr)
        ok = md > 0
        q = np.zeros(len(fr))
        q[ok] = np.abs(d[ok]) / md[ok]
        np.maximum.at(est, np.asarray(fr.trace), q)
    return est


# --- grids ----------------------------------------------------------------


def grid_lines(space: FiniteMetricSpace, n: int, axis: int = 1) -> list[Fragment]:
    """Lines of an ``n x n`` grid built by ``generate('grid', n)``.

    ``axis=1`` gives the vertical columns (x fixed, parametrised by y);
    ``axis=0`` the horizontal rows.
    """
    if space.coords is None or space.size != n * n:
        raise AlbertiError("expected an n x n coordinate grid")
    idx = np.arange(n * n).reshape(n, n)
    lines = idx if axis == 1 else idx.T
    return [make_fragment(space, space.coords[line, axis], line) for line in lines]


def fubini_rep(space: FiniteMetricSpace, n: int, axis: int = 1) -> AlbertiRep:
    """Grid lines with uniform probability and densities ``n mu`` on each line."""
    lines = grid_lines(space, n, axis)
    dens = [n * space.weights[np.asarray(fr.trace)] for fr in lines]
    return make_rep(lines, np.full(n, 1.0 / n), dens)


# --- files ----------------------------------------------------------------


def rep_from_dict(space: FiniteMetricSpace, data: dict) -> AlbertiRep:
    try:
        frags = [fragment_from_dict(space, fd, injective=False) for fd in data["fragments"]]
        return make_rep(frags, data["probs"], data["densities"])
    except (KeyError, TypeError) as exc:
        raise AlbertiError(f"malformed representation document: {exc}") from None


def load_rep(space: FiniteMetricSpace, path: str | Path) -> AlbertiRep:
    return rep_from_dict(space, json.loads(Path(path).read_text()))
