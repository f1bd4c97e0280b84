"""Slow reference computations used as independent checks."""

import math
from functools import lru_cache

import numpy as np


def chain_relation(z, v, t, dist, delta, alpha, tol=1e-9):
    """Strict order from the two defining inequalities, ties oriented by (t, position)."""
    m = len(t)
    tan = math.tan(alpha)
    less = [[False] * m for _ in range(m)]
    for x in range(m):
        for y in range(m):
            if x == y or (t[x], x) >= (t[y], y):
                continue
            dt = t[y] - t[x]
            dv = math.sqrt(sum((a - b) ** 2 for a, b in zip(v[x], v[y])))
            if dt >= delta * dist[z[x]][z[y]] - tol and dt * tan >= dv - tol:
                less[x][y] = True
    return less


def longest_path(less):
    m = len(less)

    @lru_cache(maxsize=None)
    def from_node(x):
        return 1 + max((from_node(y) for y in range(m) if less[x][y]), default=0)

    return max(from_node(x) for x in range(m))


def max_pair_quotient(values, dist):
    values = np.asarray(values, dtype=float)
    best = 0.0
    n = len(values)
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i][j] > 0:
                best = max(best, abs(values[i] - values[j]) / dist[i][j])
    return best


def removed_length(t, intervals):
    """Length of the union of open intervals intersected with (0, t), by merging."""
    spans = sorted((max(a, 0.0), min(b, t)) for a, b in intervals if min(b, t) > max(a, 0.0))
    total, cur_a, cur_b = 0.0, None, None
    for a, b in spans:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


def lip_at(dist_row, f, x, r):
    """(biglip, smllip) at scale r straight from the definitions, realized radii only."""
    radii = sorted({d for d in dist_row if 0 < d <= r})
    if not radii:
        return None
    q = []
    for s in radii:
        q.append(max(abs(f[y] - f[x]) for y in range(len(f)) if dist_row[y] <= s) / s)
    return max(q), min(q)


def porosity_ratio(dist, Y, y, r):
    """Best dist(y', Y) / d(y, y') over 0 < d(y, y') <= r."""
    best = 0.0
    for p in range(len(dist)):
        d = dist[y][p]
        if 0 < d <= r:
            gap = min(dist[p][k] for k in Y)
            best = max(best, gap / d)
    return best
