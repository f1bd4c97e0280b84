"""Command-line front end: ``lipfrag <group> <action> [options]``.

Each run writes ``<group>_<action>.json`` and any CSV tables into the output
directory (``--out``, else ``$LIPFRAG_OUT``, else ``./lipfrag-out``).
Reports echo the configuration and tolerances and carry no timestamps, so
repeated runs with the same arguments are byte-identical.

Exit codes: 0 success, 1 validation failure, 2 bad input, 3 internal
invariant breach.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .alberti import (
    AlbertiError,
    derivation_apply,
    effective_speed,
    fubini_rep,
    greedy_build_rep,
    indicator_combine,
    load_rep,
    reparametrize,
    scale_rep,
    sum_reps,
    validate_rep,
)
from .approx import ApproxError, onedim_approx
from .fragment import ConeSpec, FragmentError, fragment_from_dict, load_function
from .lipscape import (
    SATURATION_SHRINK,
    LipscapeError,
    gap_detect,
    line_pool,
    lip_profile,
    liplip_check,
    porosity_saturate,
    porosity_scales,
    porosity_scan,
)
from .poset import PosetError, build_chain_order, is_antichain, longest_chain, mirsky_decompose, random_nodes
from .space import (
    DEFAULT_TOL,
    SpaceError,
    build_net,
    cantor_coords,
    dyadic_scales,
    estimate_assouad,
    generate,
    load_space,
    save_space,
)
from .zahorski import ZahorskiError, cantor_independent, liplip_violation_report

OUT_ENV = "LIPFRAG_OUT"
DEFAULT_OUT = "lipfrag-out"
EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_BREACH = 0, 1, 2, 3
DOMAIN_ERRORS = (SpaceError, FragmentError, PosetError, ApproxError, AlbertiError, LipscapeError, ZahorskiError)


class InputError(Exception):
    """Bad arguments or unreadable input files."""


# --- input helpers --------------------------------------------------------


def _space(path):
    if not path:
        raise InputError("--space is required")
    try:
        return load_space(path)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except (json.JSONDecodeError, SpaceError, ValueError) as exc:
        raise InputError(f"cannot read space {path}: {exc}") from None


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"{name} expects comma-separated numbers, got {text!r}") from None


def _ints(text: str, name: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"{name} expects comma-separated integers, got {text!r}") from None


def _subset(space, spec: str | None) -> list[int]:
    """``all``, ``cantor:LEVEL`` (interval endpoints), ``cantor-intervals:LEVEL``
    (every point inside the level intervals), ``ids:a,b`` or a file of ids."""
    if spec is None or spec == "all":
        return list(range(space.size))
    if spec.startswith(("cantor:", "cantor-intervals:")):
        if space.coords is None or space.coords.shape[1] != 1:
            raise InputError("cantor subsets need a one-dimensional coordinate space")
        kind, level = spec.split(":", 1)
        ends = cantor_coords(int(level))[:, 0]
        x = space.coords[:, 0]
        if kind == "cantor":
            keep = np.abs(x[:, None] - ends[None, :]).min(axis=1) <= 1e-12
        else:
            keep = np.zeros(space.size, dtype=bool)
            for a, b in zip(ends[0::2], ends[1::2]):
                keep |= (x >= a - 1e-12) & (x <= b + 1e-12)
        return [int(i) for i in np.nonzero(keep)[0]]
    try:
        if spec.startswith("ids:"):
            return [space.index_of(p) for p in spec[4:].split(",") if p]
        lines = Path(spec).read_text().split()
        return [space.index_of(p) for p in lines]
    except FileNotFoundError:
        raise InputError(f"no such subset file: {spec}") from None
    except SpaceError as exc:
        raise InputError(str(exc)) from None


def _function(space, spec: str | None, subset=None) -> np.ndarray:
    """``coord:K``, ``coords``, ``abs:K``, ``dist`` (to the subset) or a CSV ``id,f1..fq``."""
    if not spec:
        raise InputError("--function is required")
    if spec == "dist":
        if subset is None:
            raise InputError("--function dist needs --subset")
        return space.dist[:, subset].min(axis=1)
    if spec.startswith(("coord:", "abs:")) or spec == "coords":
        if space.coords is None:
            raise InputError("coordinate functions need a coordinate space")
        if spec == "coords":
            return space.coords.copy()
        kind, k = spec.split(":", 1)
        col = space.coords[:, int(k)]
        return np.abs(col) if kind == "abs" else col.copy()
    try:
        return load_function(space, spec)
    except FileNotFoundError:
        raise InputError(f"no such function file: {spec}") from None
    except (FragmentError, SpaceError, ValueError) as exc:
        raise InputError(f"cannot read function {spec}: {exc}") from None


def _rep(space, path):
    if not path:
        raise InputError("--rep is required")
    try:
        return load_rep(space, path)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except (json.JSONDecodeError, AlbertiError, FragmentError, SpaceError) as exc:
        raise InputError(f"cannot read representation {path}: {exc}") from None


def _positive(value, name: str):
    if value is None or not value > 0:
        raise InputError(f"{name} must be positive, got {value}")


def _angle(value, name: str = "--alpha"):
    if value is None or not (0 < value < math.pi / 2):
        raise InputError(f"{name} must lie strictly inside (0, pi/2), got {value}")


def _csv(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_cell(v) for v in r))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float, Fraction)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


# --- handlers -------------------------------------------------------------
# Each returns (result, ok, tables, files).


def cmd_space_validate(a):
    if not a.space:
        raise InputError("--space is required")
    try:
        sp = load_space(a.space, a.tol)
    except FileNotFoundError:
        raise InputError(f"no such file: {a.space}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"cannot parse {a.space}: {exc}") from None
    except SpaceError as exc:
        return {"valid": False, "error": str(exc), "indices": list(exc.indices)}, False, {}, {}
    out = {"valid": True, "size": sp.size, "diameter": sp.diameter, "total_mass": sp.total_mass, "metric": sp.metric}
    tables = {}
    if a.assouad:
        est = estimate_assouad(sp, dyadic_scales(sp.diameter, a.assouad_eps, a.assouad_count), seed=a.seed, tol=a.tol)
        out["assouad"] = {"exponent": est.exponent, "table": list(est.table)}
        tables["assouad"] = _csv(["N", "r", "max_count", "exponent"], [[r["N"], r["r"], r["max_count"], r["exponent"]] for r in est.table])
    return out, True, tables, {}


def cmd_space_generate(a):
    if a.n < 1 or a.dim < 1 or a.level < 0:
        raise InputError("--n and --dim must be >= 1 and --level >= 0")
    sp = generate(a.kind, n=a.n, dim=a.dim, level=a.level, metric=a.metric)
    doc = json.dumps(sp.to_dict(), indent=1, sort_keys=True)
    return {"size": sp.size, "diameter": sp.diameter, "file": "space.json"}, True, {}, {"space.json": doc}


def cmd_net_build(a):
    sp = _space(a.space)
    _positive(a.net_eps, "--net-eps")
    net = build_net(sp, a.net_eps, a.tol)
    return (
        {"eps": net.eps, "size": len(net.members), "members": [sp.ids[i] for i in net.members]},
        True,
        {"members": _csv(["id"], [[sp.ids[i]] for i in net.members])},
        {},
    )


def _poset(a):
    _positive(a.delta, "--delta")
    _angle(a.alpha)
    if a.nodes:
        sp = _space(a.space)
        try:
            doc = json.loads(Path(a.nodes).read_text())
            z = np.array([sp.index_of(str(n["z"])) for n in doc["nodes"]], dtype=int)
            t = np.array([float(n["t"]) for n in doc["nodes"]])
            v = np.array([[float(c) for c in n.get("v", [])] for n in doc["nodes"]]).reshape(len(t), -1)
        except FileNotFoundError:
            raise InputError(f"no such file: {a.nodes}") from None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"cannot read nodes {a.nodes}: {exc}") from None
        base = sp
    else:
        if a.random < 1 or a.base_size < 1:
            raise InputError("--random and --base-size must be >= 1")
        base = generate("segment", n=a.base_size)
        rng = np.random.default_rng(a.seed)
        z, v, t = random_nodes(rng, a.random, a.base_size, q=a.q)
    return build_chain_order((z, v, t), a.delta, a.alpha, base, a.tol), base


def cmd_poset_chains(a):
    poset, base = _poset(a)
    res = longest_chain(poset)
    rows = [[i, base.ids[int(poset.z[i])], float(poset.t[i]), int(res.levels[i])] for i in range(len(poset))]
    return (
        {"nodes": len(poset), "longest_chain": res.length, "chain": list(res.chain)},
        True,
        {"levels": _csv(["node", "z", "t", "level"], rows)},
        {},
    )


def cmd_poset_antichains(a):
    poset, _ = _poset(a)
    levels = mirsky_decompose(poset)
    res = longest_chain(poset)
    ok_anti = all(is_antichain(poset, lv) for lv in levels)
    ok = ok_anti and len(levels) == res.length
    rows = [[k + 1, i] for k, lv in enumerate(levels) for i in lv]
    return (
        {"nodes": len(poset), "antichains": [list(lv) for lv in levels], "count": len(levels),
         "longest_chain": res.length, "pairwise_incomparable": ok_anti},
        ok,
        {"antichains": _csv(["level", "node"], rows)},
        {},
    )


def cmd_approx_run(a):
    _positive(a.delta, "--delta")
    _angle(a.alpha)
    sp = _space(a.space)
    S = _subset(sp, a.subset)
    f = _function(sp, a.function, S)
    w = _floats(a.w, "--w") if a.w else [1.0] * (1 if f.ndim == 1 else f.shape[1])
    w = list(np.asarray(w) / np.linalg.norm(w))
    ns = _ints(a.n, "--n")
    if not ns or min(ns) < 1:
        raise InputError("--n must list positive integers")
    runs, rows = [], []
    last = None
    for n in ns:
        ap = onedim_approx(sp, S, f, w, a.delta, a.alpha, n, a.tol, local_audit=not a.no_local)
        cert = dict(ap.certificate)
        runs.append(cert)
        rows.append([n, cert["M_n"], cert["sup_error"], cert["bound"], cert["bound_ok"], cert["global_lip_ok"]])
        last = ap
    ok = all(c["bound_ok"] and c["global_lip_ok"] for c in runs)
    tau_rows = [[sp.ids[i], float(last.values[i]), float(last.tau_n[i])] for i in range(sp.size)]
    return (
        {"runs": runs, "subset_size": len(S)},
        ok,
        {"error_vs_n": _csv(["n", "M_n", "sup_error", "bound", "bound_ok", "lip_ok"], rows),
         "tau": _csv(["id", "value", "tau_n"], tau_rows)},
        {},
    )


def cmd_alberti_build(a):
    if a.kind == "fubini":
        if a.n < 1:
            raise InputError("--n must be >= 1")
        sp = generate("grid", n=a.n)
        rep = fubini_rep(sp, a.n)
        extra = {"space.json": json.dumps(sp.to_dict(), indent=1, sort_keys=True)}
        info = {"kind": "fubini", "fragments": len(rep)}
    else:
        _positive(a.delta, "--delta")
        _angle(a.alpha)
        sp = _space(a.space)
        f = _function(sp, a.function)
        axis = _floats(a.cone_axis, "--cone-axis") if a.cone_axis else [1.0] * (1 if f.ndim == 1 else f.shape[1])
        q = 1 if f.ndim == 1 else f.shape[1]
        if len(axis) != q or f.ndim == 1:
            raise InputError(f"--cone-axis has {len(axis)} entries but greedy building needs a vector function matching it (got {q} components); use --function coords")
        try:
            cone = ConeSpec.from_direction(axis, a.alpha)
        except FragmentError as exc:
            raise InputError(str(exc)) from None
        res = greedy_build_rep(sp, f, cone, a.delta, a.target, a.tol)
        rep = res.rep
        extra = {}
        info = {"kind": "greedy", "fragments": len(rep), "coverage": res.coverage,
                "residual": [sp.ids[i] for i in res.residual], "chains": list(res.chains)}
    extra["rep.json"] = json.dumps(rep.to_dict(), indent=1, sort_keys=True)
    return info, True, {}, extra


def cmd_alberti_validate(a):
    sp = _space(a.space)
    rep = _rep(sp, a.rep)
    r = validate_rep(sp, rep, a.tol)
    rows = [[sp.ids[i], float(r.residual[i])] for i in range(sp.size)]
    return (
        {"max_residual": r.max_residual, "total_residual": r.total_residual, "ok": r.ok, "conditions": r.conditions},
        r.ok,
        {"residual": _csv(["id", "residual"], rows)},
        {},
    )


def cmd_alberti_derive(a):
    sp = _space(a.space)
    rep = _rep(sp, a.rep)
    f = _function(sp, a.function)
    Df = derivation_apply(sp, rep, f)
    sig = effective_speed(sp, rep)
    vals = Df.values if Df.values.ndim == 1 else Df.values[:, 0]
    rows = [[sp.ids[i], float(vals[i]), float(sig.values[i]), bool(Df.defined[i])] for i in range(sp.size)]
    return (
        {"defined": int(Df.defined.sum()), "bound": Df.bound},
        True,
        {"derivation": _csv(["id", "Df", "sigma", "defined"], rows)},
        {},
    )


def cmd_alberti_algebra(a):
    sp = _space(a.space)
    rep = _rep(sp, a.rep)
    f = _function(sp, a.function)
    base = derivation_apply(sp, rep, f)
    if a.op == "reparam":
        if a.a == 0:
            raise InputError("--a must be nonzero")
        new, expect, allow = reparametrize(rep, a.a, a.b), a.a * base.values, a.tol
    elif a.op == "indicator":
        U = _subset(sp, a.subset)
        chi = np.zeros(sp.size)
        chi[U] = 1.0
        new, expect, allow = indicator_combine(rep, U), chi * base.values, a.tol
    elif a.op == "sum":
        if a.copies < 1:
            raise InputError("--copies must be >= 1")
        new, expect, allow = sum_reps([rep] * a.copies), a.copies * base.values, a.tol
    else:
        lam = _function(sp, a.lam)
        M = float(np.abs(lam).max()) * 2 if a.scale_m is None else a.scale_m
        new = scale_rep(rep, lam, a.depth, M)
        expect = lam * base.values
        allow = M * 2.0**-a.depth * np.abs(base.values) + a.tol
    got = derivation_apply(sp, new, f)
    both = base.defined & got.defined
    dev = np.abs(got.values - expect)
    ok = bool(np.all(dev[both] <= np.broadcast_to(allow, dev.shape)[both]))
    return (
        {"op": a.op, "fragments": len(new), "max_deviation": float(dev[both].max()) if both.any() else 0.0, "ok": ok},
        ok,
        {"derivation": _csv(["id", "expected", "got"], [[sp.ids[i], float(expect[i]), float(got.values[i])] for i in range(sp.size)])},
        {"rep.json": json.dumps(new.to_dict(), indent=1, sort_keys=True)},
    )


def _scales(a, sp):
    if a.scales:
        return _floats(a.scales, "--scales")
    return None


def cmd_lip_profile(a):
    sp = _space(a.space)
    f = _function(sp, a.function, _subset(sp, a.subset) if a.subset else None)
    prof = lip_profile(sp, f, _scales(a, sp), tol=a.tol)
    return (
        {"scales": prof.scales, "summary": {sp.ids[i]: {"biglip": prof.summary_biglip[i], "smllip": prof.summary_smllip[i]} for i in range(sp.size)}},
        True,
        {"profile": prof.to_csv()},
        {},
    )


def cmd_lip_liplip(a):
    sp = _space(a.space)
    f = _function(sp, a.function, _subset(sp, a.subset) if a.subset else None)
    rep = liplip_check(sp, f, a.tol, a.tau, _scales(a, sp))
    ok = rep.ok and not rep.keith_failures
    rows = [[sp.ids[i], r] for i, r in enumerate(rep.ratio)]
    return rep.to_dict(sp.ids), ok, {"ratio": _csv(["id", "ratio"], rows)}, {}


def _por_scales(a, sp):
    if a.scales:
        return _floats(a.scales, "--scales")
    _positive(a.r_max, "--r-max")
    return list(porosity_scales(a.r_max, a.count))


def cmd_porosity_scan(a):
    sp = _space(a.space)
    Y = _subset(sp, a.subset)
    scan = porosity_scan(sp, Y, _por_scales(a, sp), a.tol)
    doc = scan.to_dict(sp)
    ok = a.c is None or scan.certified > a.c
    rows = [[w["center"], w["scale"], w["c"], w["witness"]] for w in doc["witnesses"]]
    return doc, ok, {"witnesses": _csv(["center", "scale", "c", "witness"], rows)}, {}


def cmd_porosity_saturate(a):
    sp = _space(a.space)
    K = _subset(sp, a.subset)
    scales = _por_scales(a, sp)
    c = a.c
    if c is None:
        c = porosity_scan(sp, K, [SATURATION_SHRINK * r for r in scales], a.tol).certified * (1 - 1e-9)
        if c <= 0:
            return {"c": 0.0, "ok": False, "error": "the set is not porous at the audited scales"}, False, {}, {}
    _positive(c, "--c")
    sat = porosity_saturate(sp, K, c, scales, a.tol)
    target = 2 * c / 3 - a.margin
    ok = sat.rescan.certified >= target
    out = sat.to_dict(sp)
    out.update({"c": c, "target": target, "recertified": sat.rescan.certified, "ok": ok})
    return out, ok, {}, {"saturated.json": json.dumps(sat.space.to_dict(), indent=1, sort_keys=True)}


def cmd_gap_detect(a):
    sp = _space(a.space)
    S = _subset(sp, a.subset)
    f = _function(sp, a.function or "dist", S)
    if not a.alpha > a.beta:
        raise InputError(f"--alpha must exceed --beta, got alpha={a.alpha}, beta={a.beta}")
    if a.pool == "line":
        pool = line_pool(sp, S)
    else:
        try:
            doc = json.loads(Path(a.pool).read_text())
            pool = [fragment_from_dict(sp, fd, injective=False) for fd in doc["fragments"]]
        except FileNotFoundError:
            raise InputError(f"no such pool file: {a.pool}") from None
        except (json.JSONDecodeError, KeyError, FragmentError, SpaceError) as exc:
            raise InputError(f"cannot read pool {a.pool}: {exc}") from None
    v = gap_detect(sp, S, f, a.alpha, a.beta, pool, _scales(a, sp), a.tol)
    return v.to_dict(sp), v.candidate, {}, {}


def _zahorski(a):
    _positive(a.alpha, "--alpha")
    _positive(a.delta, "--delta")
    _positive(a.lip, "--lip")
    if a.M < 1 or a.depth < 1 or a.level < 1:
        raise InputError("--M, --depth and --level must be >= 1")
    return cantor_independent(a.level, a.delta, a.lip, a.alpha, a.M, a.depth)


def cmd_zahorski_build(a):
    res, fam = _zahorski(a)
    out = {"schedule": res.schedule.to_dict(), "certificate": res.certificate, "ok": res.ok,
           "S_prime": [fam.space.ids[i] for i in res.S_prime], "sample_size": fam.space.size,
           "truncations": [t.audit for t in res.truncations]}
    coords = _csv(["id", "x"], [[fam.space.ids[i], float(c)] for i, c in enumerate(fam.space.coords)])
    return out, res.ok, {"psi": res.psi_csv(fam.space.ids), "points": coords}, {}


def cmd_zahorski_report(a):
    res, fam = _zahorski(a)
    rep = liplip_violation_report(fam.space, res.S_prime, res.phi, res.schedule, a.delta)
    rows = [[r["point"], r["biglip"], r["window_variation"], r["ratio"] if r["ratio"] is not None else "inf"] for r in rep["rows"]]
    return rep, rep["ok"], {"ratios": _csv(["id", "biglip", "window_variation", "ratio"], rows)}, {}


# --- parser ---------------------------------------------------------------


def _common(p, tol=DEFAULT_TOL):
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--tol", type=float, default=tol, help="numerical tolerance")
    p.add_argument("--seed", type=int, default=0, help="seed for every randomized step")
    p.add_argument("--workers", type=int, default=1, help="accepted for compatibility; runs are single-threaded")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lipfrag", description="Curve fragments, chain orders and Lipschitz landscapes on finite metric spaces.")
    ap.add_argument("--version", action="version", version=f"lipfrag {__version__}")
    groups = ap.add_subparsers(dest="group", required=True)

    def action(group, name, func, tol=DEFAULT_TOL):
        p = group.add_parser(name)
        _common(p, tol)
        p.set_defaults(func=func)
        return p

    g = groups.add_parser("space").add_subparsers(dest="action", required=True)
    p = action(g, "validate", cmd_space_validate)
    p.add_argument("--space")
    p.add_argument("--assouad", action="store_true", help="also estimate the covering exponent")
    p.add_argument("--assouad-eps", type=float, default=0.25)
    p.add_argument("--assouad-count", type=int, default=4)
    p = action(g, "generate", cmd_space_generate)
    p.add_argument("--kind", choices=["grid", "segment", "cantor"], required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--metric", choices=["euclidean", "max"], default="euclidean")

    g = groups.add_parser("net").add_subparsers(dest="action", required=True)
    p = action(g, "build", cmd_net_build)
    p.add_argument("--space")
    p.add_argument("--net-eps", type=float, required=True)

    g = groups.add_parser("poset").add_subparsers(dest="action", required=True)
    for name, func in (("chains", cmd_poset_chains), ("antichains", cmd_poset_antichains)):
        p = action(g, name, func)
        p.add_argument("--space")
        p.add_argument("--nodes", help="JSON file with nodes [{z, v, t}]")
        p.add_argument("--random", type=int, default=50, help="random node count when --nodes is absent")
        p.add_argument("--base-size", type=int, default=20)
        p.add_argument("--q", type=int, default=2)
        p.add_argument("--delta", type=float, default=0.5)
        p.add_argument("--alpha", type=float, default=math.pi / 4)

    g = groups.add_parser("approx").add_subparsers(dest="action", required=True)
    p = action(g, "run", cmd_approx_run)
    p.add_argument("--space")
    p.add_argument("--subset", default="all")
    p.add_argument("--function", default="coord:0")
    p.add_argument("--w", help="unit direction, comma-separated")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--alpha", type=float, default=math.pi / 4)
    p.add_argument("--n", default="9,27,81", help="comma-separated resolutions")
    p.add_argument("--no-local", action="store_true", help="skip the local Lipschitz report")

    g = groups.add_parser("alberti").add_subparsers(dest="action", required=True)
    p = action(g, "build", cmd_alberti_build)
    p.add_argument("--kind", choices=["fubini", "greedy"], default="fubini")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--space")
    p.add_argument("--function", default="coords")
    p.add_argument("--cone-axis")
    p.add_argument("--alpha", type=float, default=math.pi / 4, help="cone half-angle")
    p.add_argument("--delta", type=float, default=0.5, help="speed lower bound")
    p.add_argument("--target", type=float, default=1.0)
    p = action(g, "validate", cmd_alberti_validate, tol=1e-12)
    p.add_argument("--space")
    p.add_argument("--rep")
    p = action(g, "derive", cmd_alberti_derive)
    p.add_argument("--space")
    p.add_argument("--rep")
    p.add_argument("--function", default="coord:1")
    p = action(g, "algebra", cmd_alberti_algebra)
    p.add_argument("--space")
    p.add_argument("--rep")
    p.add_argument("--function", default="coord:1")
    p.add_argument("--op", choices=["reparam", "indicator", "sum", "scale"], required=True)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--subset")
    p.add_argument("--copies", type=int, default=2)
    p.add_argument("--lam", default="coord:0", help="scaling function for --op scale")
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--scale-m", type=float)

    g = groups.add_parser("lip").add_subparsers(dest="action", required=True)
    for name, func in (("profile", cmd_lip_profile), ("liplip", cmd_lip_liplip)):
        p = action(g, name, func)
        p.add_argument("--space")
        p.add_argument("--function")
        p.add_argument("--subset")
        p.add_argument("--scales", help="comma-separated scale grid")
        if name == "liplip":
            p.add_argument("--tau", type=float)

    g = groups.add_parser("porosity").add_subparsers(dest="action", required=True)
    for name, func in (("scan", cmd_porosity_scan), ("saturate", cmd_porosity_saturate)):
        p = action(g, name, func)
        p.add_argument("--space")
        p.add_argument("--subset", default="all")
        p.add_argument("--scales")
        p.add_argument("--r-max", type=float, default=1.0 / 3.0)
        p.add_argument("--count", type=int, default=5)
        p.add_argument("--c", type=float)
        if name == "saturate":
            p.add_argument("--margin", type=float, default=0.01)

    g = groups.add_parser("gap").add_subparsers(dest="action", required=True)
    p = action(g, "detect", cmd_gap_detect)
    p.add_argument("--space")
    p.add_argument("--subset", default="all")
    p.add_argument("--function")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--pool", default="line", help="'line' or a JSON file of fragments")
    p.add_argument("--scales")

    g = groups.add_parser("zahorski").add_subparsers(dest="action", required=True)
    for name, func in (("build", cmd_zahorski_build), ("report", cmd_zahorski_report)):
        p = action(g, name, func)
        p.add_argument("--level", type=int, default=3)
        p.add_argument("--delta", type=float, default=0.5, help="variation factor delta0")
        p.add_argument("--lip", type=float, default=1.0)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--M", type=int, default=2)
        p.add_argument("--depth", type=int, default=6)
    return ap


def _out_dir(a) -> Path:
    return Path(a.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _write(out: Path, stem: str, report: dict, tables: dict, files: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json.dumps(_clean(report), indent=1, sort_keys=True, allow_nan=False) + "\n")
    for name, text in sorted(tables.items()):
        (out / f"{stem}_{name}.csv").write_text(text)
    for name, text in sorted(files.items()):
        (out / name).write_text(text + ("" if text.endswith("\n") else "\n"))


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    stem = f"{a.group}_{a.action}"
    config = {k: v for k, v in sorted(vars(a).items()) if k not in ("func", "out")}
    report = {
        "tool": "lipfrag",
        "version": __version__,
        "command": f"{a.group} {a.action}",
        "config": config,
        "tolerances": {"tol": a.tol},
    }
    tables, files = {}, {}
    try:
        if a.tol < 0:
            raise InputError(f"--tol must be nonnegative, got {a.tol}")
        result, ok, tables, files = a.func(a)
        report["result"] = result
        report["status"] = "ok" if ok else "failed"
        code = EXIT_OK if ok else EXIT_FAIL
    except InputError as exc:
        report.update(status="bad_input", error=str(exc))
        code = EXIT_INPUT
    except DOMAIN_ERRORS as exc:
        report.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        code = EXIT_FAIL
    except Exception as exc:  # noqa: BLE001 - reported as an invariant breach
        report.update(status="invariant_breach", error=f"{type(exc).__name__}: {exc}")
        code = EXIT_BREACH
    report["exit_code"] = code
    _write(_out_dir(a), stem, report, tables, files)
    line = f"{report['command']}: {report['status']}"
    if "error" in report:
        line += f" ({report['error']})"
    print(line, file=sys.stderr if code else sys.stdout)
    return code


def main(argv: list[str] | None = None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
