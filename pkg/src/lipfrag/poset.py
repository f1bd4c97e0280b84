"""The chain order on cylinder nodes, longest chains and Mirsky levels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fragment import Fragment, make_fragment
from .space import DEFAULT_TOL, FiniteMetricSpace

TRANSITIVITY_FULL_LIMIT = 300


class PosetError(ValueError):
    pass


@dataclass(frozen=True)
class ChainNode:
    z: int
    v: tuple[float, ...]
    t: float


def _as_dist(base) -> np.ndarray:
    return base.dist if isinstance(base, FiniteMetricSpace) else np.asarray(base, dtype=float)


@dataclass(frozen=True, eq=False)
class ChainPoset:
    """Deduplicated nodes with the derived strict order ``less[i, j]`` (i below j).

    ``source`` maps each kept node to the first input position it came from.
    """

    z: np.ndarray
    v: np.ndarray
    t: np.ndarray
    delta: float
    alpha: float
    tol: float
    less: np.ndarray = field(repr=False)
    source: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.t)

    def node(self, i: int) -> ChainNode:
        return ChainNode(int(self.z[i]), tuple(float(c) for c in self.v[i]), float(self.t[i]))

    def comparable(self, i: int, j: int) -> bool:
        return bool(self.less[i, j] or self.less[j, i])

    def order(self) -> np.ndarray:
        """Node positions sorted by axial value, ties by position."""
        return np.lexsort((np.arange(len(self)), self.t))


def _relation(z, v, t, dist, delta, alpha, tol) -> np.ndarray:
    dt = t[None, :] - t[:, None]
    base = dist[np.ix_(z, z)]
    ok = dt >= delta * base - tol
    if v.shape[1]:
        dv = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
        ok &= dt * math.tan(alpha) >= dv - tol
    return ok


def build_chain_order(
    nodes: Sequence[ChainNode] | tuple[np.ndarray, np.ndarray, np.ndarray],
    delta: float,
    alpha: float,
    base,
    tol: float = DEFAULT_TOL,
) -> ChainPoset:
    """Order ``x ⪯ y`` iff ``t_y - t_x >= delta·d(z_x, z_y) - tol`` and
    ``(t_y - t_x)·tan(alpha) >= |v_x - v_y| - tol``.

    ``nodes`` is a list of ``ChainNode`` or a triple of arrays ``(z, v, t)``
    with ``v`` of shape ``(m, q-1)``; ``q - 1 = 0`` drops the second test.
    Exactly equal nodes are merged first. When tolerance makes a pair
    related both ways, only the direction of increasing ``(t, position)``
    is kept, so the relation is always a strict order on the kept nodes.
    """
    if not delta > 0:
        raise PosetError(f"delta must be positive, got {delta}")
    if not (0.0 < alpha < math.pi / 2):
        raise PosetError(f"alpha must lie strictly inside (0, pi/2), got {alpha}")
    if isinstance(nodes, tuple) and len(nodes) == 3 and isinstance(nodes[0], np.ndarray):
        z, v, t = nodes
        z = np.asarray(z, dtype=int)
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float).reshape(len(t), -1)
    else:
        nodes = list(nodes)
        z = np.array([n.z for n in nodes], dtype=int)
        t = np.array([n.t for n in nodes], dtype=float)
        width = len(nodes[0].v) if nodes else 0
        v = np.array([list(n.v) for n in nodes], dtype=float).reshape(len(nodes), width)
    if not len(t):
        raise PosetError("a chain poset needs at least one node")
    dist = _as_dist(base)
    seen: dict = {}
    keep = []
    for i in range(len(t)):
        key = (int(z[i]), tuple(v[i].tolist()), float(t[i]))
        if key not in seen:
            seen[key] = i
            keep.append(i)
    keep_a = np.asarray(keep)
    z, v, t = z[keep_a], v[keep_a], t[keep_a]
    rel = _relation(z, v, t, dist, delta, alpha, tol)
    m = len(t)
    rank = np.empty(m, dtype=int)
    rank[np.lexsort((np.arange(m), t))] = np.arange(m)
    less = rel & (rank[:, None] < rank[None, :])
    less.setflags(write=False)
    for a in (z, v, t):
        a.setflags(write=False)
    return ChainPoset(z, v, t, float(delta), float(alpha), float(tol), less, tuple(int(i) for i in keep))


def check_transitive(poset: ChainPoset, samples: int = 20_000, seed: int = 0) -> list[tuple[int, int, int]]:
    """Triples ``(i, j, k)`` with ``i < j < k`` in the order but not ``i < k``."""
    less = poset.less
    m = len(poset)
    if m <= TRANSITIVITY_FULL_LIMIT:
        two = (less.astype(np.int32) @ less.astype(np.int32)) > 0
        bad = np.argwhere(two & ~less)
        out = []
        for i, k in bad[:10]:
            j = int(np.nonzero(less[i] & less[:, k])[0][0])
            out.append((int(i), j, int(k)))
        return out
    rng = np.random.default_rng(seed)
    i, j, k = rng.integers(0, m, size=(3, samples))
    hit = less[i, j] & less[j, k] & ~less[i, k]
    return [(int(a), int(b), int(c)) for a, b, c in zip(i[hit], j[hit], k[hit])][:10]


@dataclass(frozen=True)
class ChainResult:
    length: int
    chain: tuple[int, ...]
    levels: np.ndarray = field(repr=False)


def chain_levels(poset: ChainPoset) -> tuple[np.ndarray, np.ndarray]:
    """Longest chain ending at each node and the chosen predecessor (-1 for none).

    Nodes are processed by ``(t, position)``; among predecessors achieving the
    best level the lowest position wins.
    """
    m = len(poset)
    level = np.zeros(m, dtype=int)
    pred = np.full(m, -1, dtype=int)
    for x in poset.order():
        below = np.nonzero(poset.less[:, x])[0]
        if len(below):
            lv = level[below]
            best = lv.max()
            level[x] = best + 1
            pred[x] = int(below[lv == best].min())
        else:
            level[x] = 1
    return level, pred


def longest_chain(poset: ChainPoset) -> ChainResult:
    level, pred = chain_levels(poset)
    top = int(level.max())
    end = int(np.nonzero(level == top)[0].min())
    chain = [end]
    while pred[chain[-1]] >= 0:
        chain.append(int(pred[chain[-1]]))
    return ChainResult(top, tuple(reversed(chain)), level)


def mirsky_decompose(poset: ChainPoset) -> list[tuple[int, ...]]:
    """Antichains ``{x : level(x) = k}`` for ``k = 1 .. longest chain length``."""
    level, _ = chain_levels(poset)
    return [tuple(int(i) for i in np.nonzero(level == k)[0]) for k in range(1, int(level.max()) + 1)]


def is_antichain(poset: ChainPoset, members: Sequence[int]) -> bool:
    a = np.asarray(members, dtype=int)
    return not poset.less[np.ix_(a, a)].any()


@dataclass(frozen=True)
class ChainCertificate:
    ok: bool
    worst_base: float
    worst_transverse: float
    cylinder_lip: tuple[float, float]
    bound: float


def chain_to_fragment(
    poset: ChainPoset, chain: Sequence[int], space: FiniteMetricSpace, tol: float | None = None
) -> tuple[Fragment, ChainCertificate]:
    """Fragment with domain the axial values and trace the base points of ``chain``.

    Every pair must satisfy ``d(z_i, z_j) <= (t_j - t_i)/delta + tol`` and
    ``|v_i - v_j| <= (t_j - t_i) tan(alpha) + tol``; a failure raises.
    """
    tol = poset.tol if tol is None else tol
    c = np.asarray(chain, dtype=int)
    t = poset.t[c]
    if len(c) > 1 and np.any(np.diff(t) <= 0):
        raise PosetError("chain must be sorted by strictly increasing axial value")
    frag = make_fragment(space, t, poset.z[c], injective=False)
    if len(c) < 2:
        return frag, ChainCertificate(True, 0.0, 0.0, (1.0, 1.0), 1.0)
    iu, ju = np.triu_indices(len(c), 1)
    dt = t[ju] - t[iu]
    d = space.dist[poset.z[c][iu], poset.z[c][ju]]
    dv = np.linalg.norm(poset.v[c][iu] - poset.v[c][ju], axis=-1) if poset.v.shape[1] else np.zeros_like(dt)
    base_excess = d - dt / poset.delta
    trans_excess = dv - dt * math.tan(poset.alpha)
    cyl = np.maximum(np.maximum(d, dv), dt) / dt
    bound = max(1.0 / poset.delta, math.tan(poset.alpha), 1.0)
    cert = ChainCertificate(
        bool(base_excess.max() <= tol and trans_excess.max() <= tol),
        float(base_excess.max()),
        float(trans_excess.max()),
        (float(cyl.min()), float(cyl.max())),
        bound,
    )
    if not cert.ok:
        bad = int(np.argmax(np.maximum(base_excess, trans_excess)))
        raise PosetError(
            f"chain certificate fails between chain positions {int(iu[bad])} and {int(ju[bad])}"
        )
    return frag, cert


def hasse_dump(poset: ChainPoset) -> dict:
    """Covering relation and Mirsky levels, for inspection and golden files."""
    rel = poset.less.astype(np.int32)
    cover = poset.less & ~((rel @ rel) > 0)
    level, _ = chain_levels(poset)
    return {
        "nodes": [
            {"z": int(poset.z[i]), "v": [float(x) for x in poset.v[i]], "t": float(poset.t[i]), "level": int(level[i])}
            for i in range(len(poset))
        ],
        "hasse": {str(i): [int(j) for j in np.nonzero(cover[i])[0]] for i in range(len(poset))},
        "delta": poset.delta,
        "alpha": poset.alpha,
    }


def random_nodes(rng: np.random.Generator, m: int, base_size: int, q: int = 2, spread: float = 1.0):
    """Random ``(z, v, t)`` arrays for experiments and tests."""
    z = rng.integers(0, base_size, size=m)
    v = rng.uniform(-spread, spread, size=(m, q - 1))
    t = rng.uniform(0, 3 * spread, size=m)
    return z, v, t
