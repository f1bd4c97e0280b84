"""Finite metric measure spaces, greedy nets and covering-count estimates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TOL = 1e-9
TRIANGLE_FULL_LIMIT = 500
TRIANGLE_SAMPLES = 10_000


class SpaceError(ValueError):
    """Invalid metric measure data; ``indices`` names the offending points."""

    def __init__(self, message: str, indices: tuple[int, ...] = ()):
        super().__init__(message)
        self.indices = tuple(indices)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    """A finite set of points with a distance matrix and point masses.

    Distances are held as a dense symmetric matrix; ``coords`` is kept when
    the space was built from coordinates, otherwise it is ``None``.
    """

    ids: tuple[str, ...]
    dist: np.ndarray
    weights: np.ndarray
    coords: np.ndarray | None = None
    metric: str = "matrix"

    def __post_init__(self):
        object.__setattr__(self, "dist", _frozen(self.dist))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.coords is not None:
            object.__setattr__(self, "coords", _frozen(self.coords))

    @property
    def size(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return self.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.size else 0.0

    def d(self, i: int, j: int) -> float:
        return float(self.dist[i, j])

    def index_of(self, pid: str) -> int:
        try:
            return self.ids.index(str(pid))
        except ValueError:
            raise SpaceError(f"unknown point id {pid!r}") from None

    def to_dict(self) -> dict:
        out: dict = {"metric": self.metric, "points": []}
        for k, pid in enumerate(self.ids):
            rec = {"id": pid, "weight": float(self.weights[k])}
            if self.coords is not None:
                rec["coords"] = [float(c) for c in self.coords[k]]
            out["points"].append(rec)
        if self.coords is None or self.metric == "matrix":
            out["metric"] = "matrix"
            out["matrix"] = self.dist.tolist()
        return out


@dataclass(frozen=True)
class Net:
    space: FiniteMetricSpace = field(repr=False)
    eps: float
    members: tuple[int, ...]


def coordinate_distances(coords: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    x = np.asarray(coords, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    diff = x[:, None, :] - x[None, :, :]
    if metric == "euclidean":
        return np.sqrt((diff**2).sum(axis=-1))
    if metric == "max":
        return np.abs(diff).max(axis=-1) if x.shape[1] else np.zeros((len(x), len(x)))
    raise SpaceError(f"unknown coordinate metric {metric!r}")


def check_metric(dist: np.ndarray, tol: float = DEFAULT_TOL, seed: int = 0) -> None:
    """Raise ``SpaceError`` on the first violated metric axiom."""
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise SpaceError(f"distance matrix must be square, got {dist.shape}")
    if not np.all(np.isfinite(dist)):
        i, j = map(int, np.argwhere(~np.isfinite(dist))[0])
        raise SpaceError(f"non-finite distance at ({i}, {j})", (i, j))
    bad = np.argwhere(dist < -tol)
    if len(bad):
        i, j = map(int, bad[0])
        raise SpaceError(f"negative distance at ({i}, {j})", (i, j))
    diag = np.abs(np.diag(dist))
    if np.any(diag > tol):
        i = int(np.argmax(diag))
        raise SpaceError(f"dist({i},{i}) = {dist[i, i]} is not zero", (i, i))
    asym = np.argwhere(np.abs(dist - dist.T) > tol)
    if len(asym):
        i, j = sorted(map(int, asym[0]))
        raise SpaceError(
            f"asymmetric distances: dist({i},{j})={dist[i, j]} but dist({j},{i})={dist[j, i]}",
            (i, j),
        )
    if n <= TRIANGLE_FULL_LIMIT:
        for k in range(n):
            via = dist[:, k][:, None] + dist[k, :][None, :]
            viol = np.argwhere(dist > via + tol)
            if len(viol):
                i, j = map(int, viol[0])
                raise SpaceError(f"triangle inequality fails for ({i}, {j}) via {k}", (i, j, k))
    else:
        rng = np.random.default_rng(seed)
        tri = rng.integers(0, n, size=(TRIANGLE_SAMPLES, 3))
        i, j, k = tri.T
        viol = np.nonzero(dist[i, j] > dist[i, k] + dist[k, j] + tol)[0]
        if len(viol):
            a, b, c = map(int, tri[viol[0]])
            raise SpaceError(f"triangle inequality fails for ({a}, {b}) via {c}", (a, b, c))


def build_space(
    points: Sequence | int | None = None,
    dist: str | np.ndarray | Sequence[Sequence[float]] = "euclidean",
    weights: Sequence[float] | None = None,
    ids: Sequence[str] | None = None,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
) -> FiniteMetricSpace:
    """Build and validate a finite metric measure space.

    ``points`` holds coordinates (an ``(n, d)`` array or a 1-D array) when
    ``dist`` is ``"euclidean"`` or ``"max"``. When ``dist`` is a matrix,
    ``points`` may be omitted or give the point count. Missing weights mean
    uniform mass summing to one.
    """
    coords = None
    if isinstance(dist, str):
        if points is None:
            raise SpaceError("coordinate metrics need point coordinates")
        coords = np.asarray(points, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        matrix = coordinate_distances(coords, dist)
        metric = dist
    else:
        matrix = np.asarray(dist, dtype=float)
        metric = "matrix"
        if points is not None and not isinstance(points, int):
            coords = np.asarray(points, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
    if matrix.ndim != 2:
        raise SpaceError("distance matrix must be two-dimensional")
    n = matrix.shape[0]
    check_metric(matrix, tol, seed)
    if weights is None:
        w = np.full(n, 1.0 / n) if n else np.zeros(0)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise SpaceError(f"expected {n} weights, got {w.shape}")
        neg = np.nonzero(w < 0)[0]
        if len(neg):
            raise SpaceError(f"negative weight at point {int(neg[0])}", (int(neg[0]),))
        if not np.all(np.isfinite(w)):
            raise SpaceError("weights must be finite")
    if ids is None:
        ids = [str(k) for k in range(n)]
    ids = tuple(str(x) for x in ids)
    if len(ids) != n or len(set(ids)) != n:
        raise SpaceError("point ids must be unique, one per point")
    return FiniteMetricSpace(ids, np.maximum(matrix, 0.0), w, coords, metric)


# --- generators -----------------------------------------------------------


def grid_coords(n: int, dim: int = 2, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    axis = np.linspace(lo, hi, n)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def cantor_coords(level: int) -> np.ndarray:
    """Endpoints of the level-``level`` middle-thirds intervals, sorted."""
    lefts = np.array([0.0])
    for k in range(level):
        lefts = np.concatenate([lefts, lefts + 2.0 * 3.0 ** (-(k + 1))])
    width = 3.0 ** (-level)
    pts = np.unique(np.concatenate([lefts, lefts + width]))
    return pts[:, None]


def generate(kind: str, n: int = 4, dim: int = 2, level: int = 3, metric: str = "euclidean") -> FiniteMetricSpace:
    """Named spaces with uniform unit total mass.

    ``grid``: ``n`` points per axis on ``[0,1]^dim``; ``segment``: ``n``
    points on ``[0,1]``; ``cantor``: interval endpoints at ``level``.
    """
    if kind == "grid":
        if n < 1 or dim < 1:
            raise SpaceError("grid needs n >= 1 and dim >= 1")
        return build_space(grid_coords(n, dim), metric)
    if kind == "segment":
        if n < 1:
            raise SpaceError("segment needs n >= 1")
        return build_space(np.linspace(0.0, 1.0, n), metric)
    if kind == "cantor":
        if level < 0:
            raise SpaceError("cantor level must be >= 0")
        return build_space(cantor_coords(level), metric)
    raise SpaceError(f"unknown generator {kind!r}")


# --- nets, restriction ----------------------------------------------------


def build_net(space: FiniteMetricSpace, eps: float, tol: float = DEFAULT_TOL) -> Net:
    """Greedy maximal ``eps``-separated set, scanning indices in ascending order.

    A point joins when it is at least ``eps - tol`` from every member chosen
    so far; every other point ends up strictly within ``eps`` of a member.
    """
    if eps <= 0:
        raise SpaceError("net separation must be positive")
    return Net(space, float(eps), tuple(greedy_net(space.dist, eps, tol)))


def greedy_net(dist: np.ndarray, eps: float, tol: float = DEFAULT_TOL, order: Iterable[int] | None = None) -> list[int]:
    n = dist.shape[0]
    covered = np.zeros(n, dtype=bool)
    members = []
    for i in range(n) if order is None else order:
        if covered[i]:
            continue
        members.append(int(i))
        covered |= dist[i] < eps - tol
        covered[i] = True
    return members


def restrict(space: FiniteMetricSpace, subset: Iterable[int]) -> FiniteMetricSpace:
    """Induced subspace on ``subset`` (kept in ascending index order)."""
    idx = sorted({int(i) for i in subset})
    if not idx:
        raise SpaceError("cannot restrict to an empty subset")
    if idx[0] < 0 or idx[-1] >= space.size:
        raise SpaceError("subset index out of range", (idx[0], idx[-1]))
    a = np.asarray(idx)
    coords = None if space.coords is None else space.coords[a]
    return FiniteMetricSpace(
        tuple(space.ids[i] for i in idx),
        space.dist[np.ix_(a, a)],
        space.weights[a],
        coords,
        space.metric,
    )


def restrict_measure(space: FiniteMetricSpace, subset: Iterable[int]) -> FiniteMetricSpace:
    """Same points, with mass kept on ``subset`` and zeroed elsewhere."""
    mask = np.zeros(space.size, dtype=bool)
    mask[list(subset)] = True
    return FiniteMetricSpace(space.ids, space.dist, np.where(mask, space.weights, 0.0), space.coords, space.metric)


def with_weights(space: FiniteMetricSpace, weights: Sequence[float]) -> FiniteMetricSpace:
    w = np.asarray(weights, dtype=float)
    if w.shape != (space.size,) or np.any(w < 0):
        raise SpaceError("weights must be nonnegative, one per point")
    return FiniteMetricSpace(space.ids, space.dist, w, space.coords, space.metric)


# --- covering counts ------------------------------------------------------

EXACT_COVER_LIMIT = 14


def _exact_cover(adj: np.ndarray) -> int:
    """Minimum number of cliques of ``adj`` covering all vertices."""
    n = adj.shape[0]
    nbrs = [frozenset(np.nonzero(adj[v])[0].tolist()) - {v} for v in range(n)]
    best = [n]

    def cliques(r, p, x):
        # Bron-Kerbosch: maximal cliques extending r inside p
        if not p and not x:
            yield r
            return
        for u in sorted(p):
            yield from cliques(r | {u}, p & nbrs[u], x & nbrs[u])
            p = p - {u}
            x = x | {u}

    def extend(uncovered: frozenset, used: int):
        if used >= best[0]:
            return
        if not uncovered:
            best[0] = used
            return
        v = min(uncovered)
        for clique in cliques(frozenset({v}), nbrs[v] & uncovered, frozenset()):
            extend(uncovered - clique, used + 1)

    extend(frozenset(range(n)), 0)
    return best[0]


def _greedy_clique_cover(adj: np.ndarray) -> int:
    # seed each piece at the hardest-to-cover point, then grow it while
    # keeping as many joint candidates as possible
    n = adj.shape[0]
    uncovered = np.ones(n, dtype=bool)
    count = 0
    while uncovered.any():
        deg = np.where(uncovered, (adj & uncovered).sum(axis=1), n + 1)
        v = int(np.argmin(deg))
        cand = adj[v] & uncovered
        cand[v] = False
        piece = [v]
        while cand.any():
            idx = np.nonzero(cand)[0]
            score = (adj[np.ix_(idx, idx)]).sum(axis=1)
            u = int(idx[np.argmax(score)])
            piece.append(u)
            cand &= adj[u]
            cand[u] = False
        uncovered[piece] = False
        count += 1
    return count


def _greedy_ball_cover(balls: np.ndarray) -> int:
    uncovered = np.ones(balls.shape[0], dtype=bool)
    count = 0
    while uncovered.any():
        c = int(np.argmax(balls[:, uncovered].sum(axis=1)))
        uncovered &= ~balls[c]
        count += 1
    return count


def covering_count(dist: np.ndarray, r: float, tol: float = DEFAULT_TOL) -> int:
    """Number of sets of diameter at most ``r`` needed to cover the points.

    Exact for small sets. Larger sets use the better of two greedy covers
    (grown cliques of the ``d <= r`` graph, balls of radius ``r/2``), which
    is an upper bound.
    """
    n = dist.shape[0]
    if n == 0:
        return 0
    adj = dist <= r + tol
    if n <= EXACT_COVER_LIMIT:
        return _exact_cover(adj)
    return min(_greedy_clique_cover(adj), _greedy_ball_cover(dist <= r / 2 + tol))


def dyadic_scales(top: float, eps: float = 0.5, count: int = 4) -> list[tuple[float, float]]:
    return [(top * 2.0 ** (-k), eps * top * 2.0 ** (-k)) for k in range(count)]


@dataclass(frozen=True)
class AssouadEstimate:
    exponent: float
    table: tuple[dict, ...]


def estimate_assouad(
    space: FiniteMetricSpace,
    scales: Sequence[tuple[float, float]],
    max_centers: int = 64,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> AssouadEstimate:
    """Covering-count estimate of the Assouad exponent.

    For each pair ``(N, r)`` with ``r = eps*N`` the sampled sets are the
    closed balls ``B(x, N/2)`` (diameter at most ``N``); each is covered by
    sets of diameter at most ``r`` and the exponent
    ``log(count)/log(N/r)`` is recorded. The estimate is the maximum.
    Centres are all points when there are at most ``max_centers`` of them,
    otherwise a seeded sample.
    """
    if not scales:
        raise SpaceError("scale list is empty")
    n = space.size
    if n <= max_centers:
        centers = np.arange(n)
    else:
        centers = np.sort(np.random.default_rng(seed).choice(n, max_centers, replace=False))
    best = 0.0
    rows = []
    for big, small in scales:
        if not (0 < small < big):
            raise SpaceError(f"scale pair ({big}, {small}) needs 0 < eps*N < N")
        worst = 0
        for x in centers:
            ball = np.nonzero(space.dist[x] <= big / 2 + tol)[0]
            sub = space.dist[np.ix_(ball, ball)]
            worst = max(worst, covering_count(sub, small, tol))
        expo = math.log(worst) / math.log(big / small) if worst > 0 else 0.0
        best = max(best, expo)
        rows.append({"N": big, "r": small, "max_count": worst, "exponent": expo})
    return AssouadEstimate(best, tuple(rows))


# --- file formats ---------------------------------------------------------


def load_space(path: str | Path, tol: float = DEFAULT_TOL) -> FiniteMetricSpace:
    """Read a space from JSON, a point CSV (``id,x1..xd,weight``) or a square distance CSV."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return space_from_dict(json.loads(text), tol)
    rows = [r for r in csv.reader(text.splitlines()) if r]
    if not rows:
        raise SpaceError(f"{path} is empty")
    head = [h.strip() for h in rows[0]]
    if head and head[0] == "id":
        body = rows[1:]
        ids = [r[0] for r in body]
        has_w = head[-1] == "weight"
        ncoord = len(head) - 1 - int(has_w)
        try:
            coords = np.array([[float(v) for v in r[1 : 1 + ncoord]] for r in body])
            w = [float(r[-1]) for r in body] if has_w else None
        except ValueError as exc:
            raise SpaceError(f"bad number in {path}: {exc}") from None
        return build_space(coords, "euclidean", w, ids, tol)
    try:
        matrix = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise SpaceError(f"bad number in {path}: {exc}") from None
    return build_space(None, matrix, tol=tol)


def space_from_dict(data: dict, tol: float = DEFAULT_TOL) -> FiniteMetricSpace:
    try:
        pts = data["points"]
        metric = data.get("metric", "euclidean")
        ids = [str(p.get("id", k)) for k, p in enumerate(pts)]
        w = [float(p.get("weight", 1.0 / len(pts))) for p in pts] if pts else []
        if metric == "matrix":
            coords = [p["coords"] for p in pts] if pts and all("coords" in p for p in pts) else None
            return build_space(coords, np.asarray(data["matrix"], dtype=float), w, ids, tol)
        return build_space([p["coords"] for p in pts], metric, w, ids, tol)
    except (KeyError, TypeError) as exc:
        raise SpaceError(f"malformed space document: missing {exc}") from None


def save_space(space: FiniteMetricSpace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(space.to_dict(), indent=1, sort_keys=True))
