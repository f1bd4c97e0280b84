"""Discrete curve fragments.

A fragment is a strictly increasing list of parameters together with the
point index visited at each parameter. Derivatives along a fragment use the
mean of the one-sided difference quotients, falling back to the single
available quotient at the two ends. This is exact on affine data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .space import DEFAULT_TOL, FiniteMetricSpace

DISAGREEMENT_RATIO = 0.10


class FragmentError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Fragment:
    domain: np.ndarray
    trace: tuple[int, ...]
    space: FiniteMetricSpace = field(repr=False)

    def __post_init__(self):
        dom = np.array(self.domain, dtype=float, copy=True)
        dom.setflags(write=False)
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "trace", tuple(int(i) for i in self.trace))

    def __len__(self) -> int:
        return len(self.trace)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.domain)

    def hop_lengths(self) -> np.ndarray:
        tr = np.asarray(self.trace)
        return self.space.dist[tr[:-1], tr[1:]]

    def to_dict(self) -> dict:
        return {"domain": [float(t) for t in self.domain], "trace": [self.space.ids[i] for i in self.trace]}


def make_fragment(
    space: FiniteMetricSpace,
    domain: Sequence[float],
    trace: Sequence[int],
    injective: bool = True,
    tol: float = 0.0,
) -> Fragment:
    """Validated constructor.

    With ``injective`` set, consecutive trace points must be more than
    ``tol`` apart so that a positive lower biLipschitz bound exists.
    """
    dom = np.asarray(domain, dtype=float)
    tr = [int(i) for i in trace]
    if dom.ndim != 1 or len(dom) < 1:
        raise FragmentError("fragment domain must be a nonempty list")
    if len(dom) != len(tr):
        raise FragmentError(f"domain has {len(dom)} values but trace has {len(tr)}")
    if not np.all(np.isfinite(dom)):
        raise FragmentError("domain values must be finite")
    if np.any(np.diff(dom) <= 0):
        k = int(np.argmax(np.diff(dom) <= 0))
        raise FragmentError(f"domain not strictly increasing at position {k}")
    if min(tr) < 0 or max(tr) >= space.size:
        raise FragmentError("trace index out of range")
    frag = Fragment(dom, tuple(tr), space)
    if injective and len(tr) > 1:
        hops = frag.hop_lengths()
        if np.any(hops <= tol):
            k = int(np.argmax(hops <= tol))
            raise FragmentError(f"consecutive trace points {tr[k]} and {tr[k + 1]} coincide")
    return frag


def _mean_one_sided(q: np.ndarray) -> np.ndarray:
    """Per-node mean of the quotients on the adjacent gaps (axis 0 = gaps)."""
    out = np.empty((q.shape[0] + 1,) + q.shape[1:])
    out[0] = q[0]
    out[-1] = q[-1]
    out[1:-1] = 0.5 * (q[:-1] + q[1:])
    return out


def _need_two(frag: Fragment, what: str) -> None:
    if len(frag) < 2:
        raise FragmentError(f"{what} is undefined on a single-point domain")


def metric_differential(frag: Fragment) -> np.ndarray:
    _need_two(frag, "metric differential")
    return _mean_one_sided(frag.hop_lengths() / frag.steps)


def one_sided_disagreement(frag: Fragment, ratio: float = DISAGREEMENT_RATIO) -> list[int]:
    """Interior positions where left and right metric quotients differ by more than ``ratio``."""
    _need_two(frag, "metric differential")
    q = frag.hop_lengths() / frag.steps
    left, right = q[:-1], q[1:]
    scale = np.maximum(np.maximum(left, right), 1e-300)
    return [int(k) + 1 for k in np.nonzero(np.abs(left - right) > ratio * scale)[0]]


def values_on_trace(frag: Fragment, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[0] != frag.space.size:
        raise FragmentError(f"function has {f.shape[0]} values, space has {frag.space.size} points")
    return f[np.asarray(frag.trace)]


def directional_derivative(frag: Fragment, f: np.ndarray) -> np.ndarray:
    """Derivative of ``f∘γ`` at each domain point; ``f`` is ``(n,)`` or ``(n, q)``."""
    _need_two(frag, "derivative")
    vals = values_on_trace(frag, f)
    steps = frag.steps.reshape((-1,) + (1,) * (vals.ndim - 1))
    return _mean_one_sided(np.diff(vals, axis=0) / steps)


def arc_weights(frag: Fragment) -> np.ndarray:
    """Length of the parameter cell around each domain point."""
    if len(frag) < 2:
        return np.zeros(len(frag))
    half = 0.5 * frag.steps
    w = np.zeros(len(frag))
    w[:-1] += half
    w[1:] += half
    return w


def lipschitz_along_trace(frag: Fragment, f: np.ndarray) -> float:
    """Largest ``|Δf| / d`` over consecutive trace pairs at positive distance."""
    vals = values_on_trace(frag, f)
    if len(frag) < 2:
        return 0.0
    dv = np.diff(vals, axis=0)
    dv = np.abs(dv) if dv.ndim == 1 else np.linalg.norm(dv, axis=1)
    hops = frag.hop_lengths()
    pos = hops > 0
    return float((dv[pos] / hops[pos]).max()) if pos.any() else 0.0


def bilipschitz_constants(frag: Fragment) -> tuple[float, float]:
    """``(l, L)``: min and max of ``d(γ(s), γ(t)) / |s - t|`` over all pairs."""
    _need_two(frag, "biLipschitz constants")
    tr = np.asarray(frag.trace)
    iu, ju = np.triu_indices(len(tr), 1)
    q = frag.space.dist[tr[iu], tr[ju]] / (frag.domain[ju] - frag.domain[iu])
    return float(q.min()), float(q.max())


def affine_reparametrize(frag: Fragment, a: float, b: float = 0.0) -> Fragment:
    """Fragment ``γ∘τ`` with ``τ(s) = a s + b``: the domain becomes ``(t - b)/a``.

    For ``a < 0`` the order of the domain, and hence of the trace, reverses.
    """
    if a == 0:
        raise FragmentError("reparametrization slope must be nonzero")
    dom = (frag.domain - b) / a
    tr = list(frag.trace)
    if a < 0:
        dom = dom[::-1]
        tr = tr[::-1]
    return Fragment(dom, tuple(tr), frag.space)


def shift_domain(frag: Fragment, offset: float) -> Fragment:
    return Fragment(frag.domain + offset, frag.trace, frag.space)


# --- cones ----------------------------------------------------------------


@dataclass(frozen=True)
class ConeSpec:
    """Cone of directions ``u`` with ``tan(angle) <w,u> > |u - <w,u> w|``."""

    axis: tuple[float, ...]
    angle: float
    closed: bool = False

    def __post_init__(self):
        w = np.asarray(self.axis, dtype=float).ravel()
        if w.size == 0 or abs(np.linalg.norm(w) - 1.0) > 1e-9:
            raise FragmentError(f"cone axis must be a unit vector, got norm {np.linalg.norm(w):.6g}")
        if not (0.0 < self.angle < math.pi / 2):
            raise FragmentError(f"cone angle {self.angle} must lie strictly inside (0, pi/2)")
        object.__setattr__(self, "axis", tuple(float(c) for c in w))

    @property
    def dim(self) -> int:
        return len(self.axis)

    @classmethod
    def from_direction(cls, direction: Sequence[float], angle: float, closed: bool = False) -> "ConeSpec":
        w = np.asarray(direction, dtype=float).ravel()
        n = np.linalg.norm(w)
        if n == 0:
            raise FragmentError("cone axis must be nonzero")
        return cls(tuple(w / n), angle, closed)

    def flipped(self) -> "ConeSpec":
        return ConeSpec(tuple(-c for c in self.axis), self.angle, self.closed)


def cone_margin(cone: ConeSpec, u: np.ndarray) -> np.ndarray:
    """``tan(angle) <w,u> - |transverse part of u|`` for one or many vectors."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(cone.axis)
    if u.shape[-1] != w.size:
        raise FragmentError(f"vector dimension {u.shape[-1]} does not match cone dimension {w.size}")
    along = u @ w
    trans = u - along[..., None] * w
    return math.tan(cone.angle) * along - np.linalg.norm(trans, axis=-1)


def cone_contains(cone: ConeSpec, u, tol: float = DEFAULT_TOL):
    """Open cones need the margin to exceed ``tol``; closed cones accept margin >= ``-tol``.

    In dimension one the transverse part vanishes, so an open cone holds
    exactly the vectors pointing along the axis.
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 1
    m = cone_margin(cone, np.atleast_2d(u))
    res = m >= -tol if cone.closed else m > tol
    return bool(res[0]) if scalar else res


class ConeField:
    """Assignment of one cone to every point; constant unless given per point."""

    def __init__(self, default: ConeSpec, overrides: dict[int, ConeSpec] | None = None):
        self.default = default
        self.overrides = dict(overrides or {})
        dims = {default.dim} | {c.dim for c in self.overrides.values()}
        if len(dims) != 1:
            raise FragmentError("all cones in a field must share one dimension")

    def __call__(self, i: int) -> ConeSpec:
        return self.overrides.get(int(i), self.default)

    @property
    def dim(self) -> int:
        return self.default.dim


# --- direction and speed --------------------------------------------------


@dataclass(frozen=True)
class DirectionSpeedReport:
    direction_ok: np.ndarray
    speed_ok: np.ndarray
    fraction: float
    direction_fraction: float
    speed_fraction: float

    def passes(self, eta: float = 0.0) -> bool:
        return self.fraction >= 1.0 - eta - 1e-12


def _mass_fraction(mask: np.ndarray, w: np.ndarray) -> float:
    tot = w.sum()
    if tot <= 0:
        return 1.0 if mask.all() else 0.0
    return float(w[mask].sum() / tot)


def check_direction_speed(
    frag: Fragment,
    f: np.ndarray,
    cones: ConeField | ConeSpec,
    delta: float,
    g: np.ndarray,
    tol: float = DEFAULT_TOL,
) -> DirectionSpeedReport:
    """Per-point direction membership of ``(f∘γ)'`` and the speed test ``(g∘γ)' >= delta·md - tol``."""
    if isinstance(cones, ConeSpec):
        cones = ConeField(cones)
    df = directional_derivative(frag, f)
    if df.ndim == 1:
        df = df[:, None]
    direction = np.array([cone_contains(cones(i), df[k], tol) for k, i in enumerate(frag.trace)], dtype=bool)
    dg = directional_derivative(frag, g)
    if dg.ndim != 1:
        raise FragmentError("speed function must be scalar-valued")
    speed = dg >= delta * metric_differential(frag) - tol
    w = arc_weights(frag)
    return DirectionSpeedReport(
        direction,
        speed,
        _mass_fraction(direction & speed, w),
        _mass_fraction(direction, w),
        _mass_fraction(speed, w),
    )


# --- files ----------------------------------------------------------------


def fragment_from_dict(space: FiniteMetricSpace, data: dict, injective: bool = True) -> Fragment:
    try:
        trace = [space.index_of(p) for p in data["trace"]]
        return make_fragment(space, data["domain"], trace, injective)
    except KeyError as exc:
        raise FragmentError(f"fragment document lacks {exc}") from None


def load_fragment(space: FiniteMetricSpace, path: str | Path) -> Fragment:
    return fragment_from_dict(space, json.loads(Path(path).read_text()))


def load_function(space: FiniteMetricSpace, path: str | Path) -> np.ndarray:
    """Read ``id,f1..fq`` rows into an ``(n,)`` or ``(n, q)`` array; missing ids are an error."""
    rows = [r for r in csv.reader(Path(path).read_text().splitlines()) if r]
    head, body = rows[0], rows[1:]
    q = len(head) - 1
    out = np.full((space.size, q), np.nan)
    for r in body:
        out[space.index_of(r[0])] = [float(v) for v in r[1:]]
    if np.isnan(out).any():
        missing = int(np.argwhere(np.isnan(out))[0][0])
        raise FragmentError(f"function values missing for point {space.ids[missing]}")
    return out[:, 0] if q == 1 else out
