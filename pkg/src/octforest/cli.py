"""Batch driver: build a forest, run one algorithm, emit JSON and VTK."""

import argparse
import hashlib
import json
import os
import random
import sys
import time

from .connectivity import build_brick, build_unitcube
from .export import leaves_vtk, points_vtk
from .forest import balance, new_uniform, partition_even, refine
from .geometry import DistortionMap, locate_points, random_points, tree_origin
from .ghost import build_ghost
from .iterate import CLOSED, OPEN, IterateStats, iterate
from .lnodes import lnodes
from .octant import DEFAULT_LMAX, ContractError, Octant, check_dimension
from .topology import entity_box
from .transport import RankGroup


class UsageError(Exception):
    pass


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--dim", type=int, default=2, choices=(2, 3))
    g.add_argument("--lmax", type=int, default=None,
                   help="maximum refinement level (default: %s)" % DEFAULT_LMAX)
    g.add_argument("--ranks", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None, help="directory for exported files")
    g.add_argument("--scheduler", choices=("roundrobin", "parallel"), default="roundrobin")
    g.add_argument("--trace", action="store_true", help="write the message trace to --out")
    g.add_argument("--conn", choices=("unitcube", "brick"), default="unitcube")
    g.add_argument("--brick", type=int, nargs="+", metavar="N", default=None,
                   help="brick extents m n [p]")
    g.add_argument("--periodic", default="", help="periodic axes, e.g. 'x' or 'xz'")
    g.add_argument("--recipe", choices=("uniform", "fractal", "corner"), default="uniform")
    g.add_argument("--level", type=int, default=2, help="initial uniform level")
    g.add_argument("--depth", type=int, default=0, help="extra levels for fractal/corner")
    g.add_argument("--no-balance", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="octforest",
                                     description="Forest-of-octrees AMR batch driver")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="build, refine, balance, partition, export")
    s = sub.add_parser("search", parents=[common], help="point location demo")
    s.add_argument("--points", type=int, default=1000)
    s.add_argument("--amplitude", type=float, default=0.3)
    g = sub.add_parser("ghost", parents=[common], help="ghost layer sizes")
    g.add_argument("--k", type=int, nargs="*", default=None, help="codimensions (default 1..d)")
    g.add_argument("--dump", action="store_true")
    it = sub.add_parser("iterate", parents=[common], help="point counts by dimension")
    it.add_argument("--mode", choices=(OPEN, CLOSED), default=OPEN)
    it.add_argument("--dump", action="store_true")
    ln = sub.add_parser("lnodes", parents=[common], help="global node numbering")
    ln.add_argument("--order", type=int, default=1)
    ln.add_argument("--dump", action="store_true")
    sub.add_parser("stats", parents=[common], help="leaf counts, levels, ghost sizes")
    return parser


def make_connectivity(args):
    d = args.dim
    if args.conn == "unitcube":
        if args.brick or args.periodic:
            raise UsageError("--brick/--periodic need --conn brick")
        return build_unitcube(d)
    ext = list(args.brick or [2] * d)
    if len(ext) not in (d - 1, d) or (d == 2 and len(ext) != 2):
        raise UsageError("--brick takes one extent per axis")
    ext += [1] * (3 - len(ext))
    bad = set(args.periodic) - set("xyz"[:d])
    if bad:
        raise UsageError(f"unknown periodic axes {''.join(sorted(bad))}")
    flags = tuple(ax in args.periodic for ax in "xyz"[:d])
    return build_brick(d, ext[0], ext[1], ext[2], periodic=flags)


def recipe_predicate(args, lmax):
    top = args.level + args.depth
    if top > lmax:
        raise UsageError(f"level + depth = {top} exceeds lmax = {lmax}")
    if args.recipe == "uniform":
        return None
    if args.recipe == "fractal":
        rng = random.Random(args.seed)
        nc = 1 << args.dim
        chosen = set(rng.sample(range(nc), nc // 2))
        return lambda o: o.level < top and (o.level == 0 or o.child_id() in chosen)
    return lambda o: o.level < top and o.tree == 0 and not any(o.coords)


def build_forest(comm, args, conn, lmax, initial):
    forest = initial[comm.rank]
    pred = recipe_predicate(args, lmax)
    if pred is not None:
        forest = refine(forest, pred, recursive=True)
    if not args.no_balance:
        forest = balance(comm, forest)
    return partition_even(comm, forest)


def level_histogram(levels):
    hist = {}
    for lv in levels:
        hist[lv] = hist.get(lv, 0) + 1
    return {str(k): hist[k] for k in sorted(hist)}


def _digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _node_position(conn, g, lmax, n):
    d = conn.dim
    t, level = g.point[0], g.point[1]
    coords = g.point[2:2 + d]
    code = g.point[2 + d:]
    lo, hi = entity_box(Octant._make(t, level, coords, lmax), code)
    slot = g.slot
    pos = []
    org = tree_origin(conn, t)
    R = 1 << lmax
    for j in range(d):
        if code[j] == 1:
            off = slot % (n - 1) + 1
            slot //= n - 1
            x = lo[j] + (hi[j] - lo[j]) * off / n
        else:
            x = lo[j]
        pos.append(org[j] + x / R)
    return tuple(pos)


def run_command(args, stderr=sys.stderr):
    """Execute one subcommand; returns (result dict, {filename: text})."""
    if args.ranks < 1:
        raise UsageError("--ranks must be positive")
    conn = make_connectivity(args)
    try:
        lmax = check_dimension(args.dim, args.lmax)
    except ContractError as exc:
        raise UsageError(str(exc)) from exc
    if not 0 <= args.level <= lmax or args.depth < 0:
        raise UsageError("level must lie in [0, lmax] and depth must be >= 0")
    recipe_predicate(args, lmax)
    for k in getattr(args, "k", None) or ():
        if not 1 <= k <= args.dim:
            raise UsageError(f"codimension {k} outside [1, {args.dim}]")
    if getattr(args, "order", 1) < 1:
        raise UsageError("--order must be at least 1")
    initial = new_uniform(conn, args.ranks, args.level, lmax)
    cmd = args.command
    timings = {}

    def body(comm):
        t0 = time.perf_counter()
        forest = build_forest(comm, args, conn, lmax, initial)
        timings.setdefault("build", time.perf_counter() - t0)
        p = comm.rank
        out = {"rank": p, "leaves": forest.num_local}
        if cmd in ("mesh", "stats"):
            out["levels"] = level_histogram(o.level for o in forest.leaves())
            out["all"] = [(o.to_tuple(), p) for o in forest.leaves()]
            if cmd == "stats":
                out["ghost"] = len(build_ghost(comm, forest, forest.dim))
        elif cmd == "ghost":
            ks = args.k or list(range(1, forest.dim + 1))
            out["ghost"] = {}
            for k in ks:
                layer = build_ghost(comm, forest, k)
                entry = {"count": len(layer)}
                if args.dump:
                    entry["layer"] = layer.to_json_obj()["ghosts"]
                out["ghost"][str(k)] = entry
        elif cmd == "iterate":
            ghost = build_ghost(comm, forest, forest.dim)
            counts = [0] * (forest.dim + 1)
            visited = []

            def cb(ctx):
                counts[ctx.point.dim] += 1
                if args.dump:
                    c = ctx.point
                    visited.append([c.octant.tree, c.octant.level, *c.octant.coords, *c.code,
                                    [[*s.octant.to_tuple()] for s in ctx.sides]])

            st = IterateStats()
            t1 = time.perf_counter()
            iterate(forest, ghost, cb, mode=args.mode, stats=st)
            timings.setdefault("iterate", time.perf_counter() - t1)
            out["points_by_dim"] = {str(k): v for k, v in enumerate(counts)}
            out["operations"] = st.operations
            if args.dump:
                out["points"] = visited
        elif cmd == "lnodes":
            ghost = build_ghost(comm, forest, forest.dim)
            t1 = time.perf_counter()
            ln = lnodes(comm, forest, ghost, args.order)
            timings.setdefault("lnodes", time.perf_counter() - t1)
            out["num_global"] = ln.num_global
            out["owned"] = ln.owned
            out["table"] = ln.global_table()
            if args.out:
                out["positions"] = {g.index: _node_position(conn, g, lmax, args.order)
                                    for g in ln.nodes if g.owner == p}
        elif cmd == "search":
            dmap = DistortionMap(args.dim, args.amplitude,
                                 (conn.brick or {"shape": [1] * args.dim})["shape"])
            pts = random_points(dmap, args.points, args.seed)
            res = {}
            for mode in ("single", "batched"):
                t1 = time.perf_counter()
                found, st, loc = locate_points(forest, dmap, pts, batched=mode == "batched")
                timings[f"search_{mode}_rank{p}"] = time.perf_counter() - t1
                res[mode] = {"found": {q: o.to_tuple() for q, o in found.items()},
                             "nonleaf_setups": loc.sphere_setups,
                             "nonleaf_matches": st.branch_matches,
                             "leaf_matches": st.leaf_matches}
            out["search"] = res
        return out

    group = RankGroup(args.ranks, mode=args.scheduler, trace=args.trace)
    t0 = time.perf_counter()
    per_rank = group.run(body)
    timings["total"] = time.perf_counter() - t0
    for k in sorted(timings):
        print(f"time {k}: {timings[k]:.4f}s", file=stderr)

    result = {"command": cmd, "dim": args.dim, "lmax": lmax, "ranks": args.ranks,
              "num_trees": conn.num_trees, "N": sum(r["leaves"] for r in per_rank),
              "N_per_rank": [r["leaves"] for r in per_rank]}
    files = {}
    if cmd in ("mesh", "stats"):
        allleaves = [e for r in per_rank for e in r["all"]]
        result["levels"] = level_histogram(t[1] for t, _ in allleaves)
        if cmd == "stats":
            result["ghost_sizes"] = [r["ghost"] for r in per_rank]
        if cmd == "mesh":
            octs = [(Octant(t[0], t[1], t[2:], lmax), q) for t, q in allleaves]
            origins = [tree_origin(conn, t) for t in range(conn.num_trees)]
            files["mesh.vtk"] = leaves_vtk(octs, origins, lmax)
            files["leaves.json"] = json.dumps([[*t, q] for t, q in allleaves]) + "\n"
    elif cmd == "ghost":
        result["ghost"] = [r["ghost"] for r in per_rank]
    elif cmd == "iterate":
        result["mode"] = args.mode
        result["points_by_dim"] = [r["points_by_dim"] for r in per_rank]
        result["operations"] = [r["operations"] for r in per_rank]
        if args.dump:
            result["points"] = [r["points"] for r in per_rank]
    elif cmd == "lnodes":
        table = [row for r in per_rank for row in r["table"]]
        result["order"] = args.order
        result["num_global"] = per_rank[0]["num_global"]
        result["owned"] = [r["owned"] for r in per_rank]
        result["table_sha256"] = _digest(table)
        if args.dump:
            result["table"] = table
        if args.out:
            pos = {}
            for r in per_rank:
                pos.update(r["positions"])
            idx = sorted(pos)
            files["nodes.vtk"] = points_vtk([pos[i] for i in idx], idx)
    elif cmd == "search":
        merged = {}
        for mode in ("single", "batched"):
            found = {}
            for r in per_rank:
                for q, t in r["search"][mode]["found"].items():
                    found.setdefault(q, []).append(list(t))
            merged[mode] = {
                "located": len(found),
                "ambiguous": sum(1 for v in found.values() if len(v) > 1),
                "nonleaf_setups": sum(r["search"][mode]["nonleaf_setups"] for r in per_rank),
                "nonleaf_matches": sum(r["search"][mode]["nonleaf_matches"] for r in per_rank),
                "leaf_matches": sum(r["search"][mode]["leaf_matches"] for r in per_rank),
                "results_sha256": _digest(sorted(found.items())),
            }
        result["points"] = args.points
        result["search"] = merged
        result["agree"] = merged["single"]["results_sha256"] == merged["batched"]["results_sha256"]
    if args.trace:
        files["trace.jsonl"] = "".join(line + "\n" for line in group.trace_lines())
    return result, files


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result, files = run_command(args)
    except (UsageError, ContractError) as exc:
        parser.error(str(exc))
    text = json.dumps(result, sort_keys=True, indent=1) + "\n"
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        files[f"{args.command}.json"] = text
        for name in sorted(files):
            with open(os.path.join(args.out, name), "w", newline="\n") as fh:
                fh.write(files[name])
    elif files.get("trace.jsonl"):
        print("--trace needs --out; trace discarded", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
