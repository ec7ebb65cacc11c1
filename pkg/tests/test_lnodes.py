import json

import pytest

from helpers import balanced_leaves, build, geometry_for, make_conn, point_box, random_leaves, tup
from octforest.forest import forests_from_leaves, new_uniform
from octforest.ghost import build_ghost
from octforest.iterate import iterate
from octforest.lnodes import determine_owner_process, lnodes, reconstruct_remote
from octforest.octant import ContractError, Octant
from octforest.topology import entity_box
from octforest.transport import run
from oracles import (global_partition, node_positions, partition_of, points_above,
                     remote_referencers)


def run_lnodes(forests, ghosts, n, mode="roundrobin", trace=False):
    P = len(forests)
    return run(P, lambda comm: lnodes(comm, forests[comm.rank], ghosts[comm.rank], n),
               mode=mode, trace=trace)


def gathered_table(results):
    return [row for r in results for row in r.global_table()]


def uniform_leaves(conn, level, lmax):
    return list(new_uniform(conn, 1, level, lmax)[0].leaves())


def test_single_leaf_order_two():
    conn = make_conn(3)
    forests, ghosts = build(conn, [Octant.root(0, 3, 3)], 1, 3, 3)
    (res,) = run_lnodes(forests, ghosts, 2)
    assert res.num_global == 27
    assert res.global_table() == [list(range(27))]


@pytest.mark.parametrize("d,L,n", [(2, L, n) for L in (1, 2, 3) for n in (1, 2, 3)]
                         + [(3, 1, n) for n in (1, 2, 3)] + [(3, 2, 1)])
def test_uniform_closed_form(d, L, n):
    conn = make_conn(d)
    lmax = L + 1
    forests, ghosts = build(conn, uniform_leaves(conn, L, lmax), 1, lmax, d)
    (res,) = run_lnodes(forests, ghosts, n)
    assert res.num_global == (n * 2 ** L + 1) ** d
    assert sorted({i for row in res.global_table() for i in row}) == list(range(res.num_global))


def test_one_hanging_face_has_twelve_nodes():
    conn = make_conn(2)
    lmax = 3
    root = Octant.root(0, 2, lmax)
    leaves = [root.child(0)] + root.child(1).children() + [root.child(2), root.child(3)]
    forests, ghosts = build(conn, leaves, 1, lmax, 2)
    (res,) = run_lnodes(forests, ghosts, 1)
    assert res.num_global == 12
    table = res.global_table()
    big0 = table[0]
    small = table[1:5]
    # the small leaf at the coarse face's lower end reuses the coarse face endpoints
    assert small[0][2] == big0[3]
    assert small[2][0] == big0[1]
    assert small[2][2] == big0[3]


def refined_interior_leaf(d, lmax):
    """Uniform level 2 with one interior leaf refined: every face and edge of
    the refined leaf is hanging, so all child/entity configurations occur."""
    conn = make_conn(d)
    leaves = []
    for o in uniform_leaves(conn, 2, lmax):
        if all(x == 1 << (lmax - 2) for x in o.coords):
            leaves.extend(o.children())
        else:
            leaves.append(o)
    return conn, leaves


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_continuity_on_all_hanging_configurations(d, n):
    lmax = 4
    conn, leaves = refined_interior_leaf(d, lmax)
    geom = geometry_for(conn, lmax)
    pos = node_positions(geom, [tup(o) for o in leaves], n)
    for P in (1, 3):
        forests, ghosts = build(conn, leaves, P, lmax, d)
        res = run_lnodes(forests, ghosts, n)
        assert partition_of(gathered_table(res)) == partition_of(pos)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("case", [(2, (2, 2), (True, False), 4), (3, (2, 1, 1), None, 3)])
def test_continuity_and_partition_independence(seed, case):
    d, shape, periodic, lmax = case
    conn = make_conn(d, shape, periodic)
    geom = geometry_for(conn, lmax)
    leaves = balanced_leaves(conn, random_leaves(conn, lmax, seed, min_leaves=8), lmax)
    pos = node_positions(geom, [tup(o) for o in leaves], 2)
    base = None
    for P in (1, 2, 4):
        forests, ghosts = build(conn, leaves, P, lmax, d)
        table = gathered_table(run_lnodes(forests, ghosts, 2))
        if base is None:
            base = table
            assert partition_of(table) == partition_of(pos)
        assert table == base


def test_owner_rule_and_sharer_symmetry():
    conn = make_conn(2, (2, 1))
    lmax = 4
    geom = geometry_for(conn, lmax)
    leaves = balanced_leaves(conn, random_leaves(conn, lmax, 5, min_leaves=30), lmax)
    part = global_partition(geom, [tup(o) for o in leaves])
    P = 4
    forests, ghosts = build(conn, leaves, P, lmax, 2)
    results = run_lnodes(forests, ghosts, 2)
    rank_of = {tup(o): p for p, f in enumerate(forests) for o in f.leaves()}
    owner_side = {}
    referenced = [set() for _ in range(P)]
    for p, r in enumerate(results):
        for row in r.element_nodes:
            for k in row:
                referenced[p].add(r.nodes[k].index)
        for g in r.nodes:
            t = g.point
            o = Octant(t[0], t[1], t[2:2 + 2], lmax)
            code = t[2 + 2:]
            lo, hi = entity_box(o, code)
            org = geom.origin(o.tree)
            B = geom.normalize(tuple(a + b for a, b in zip(org, lo)),
                               tuple(a + b for a, b in zip(org, hi)))
            assert g.owner == min(rank_of[s] for s in part[B])
            if g.owner == p:
                owner_side[g.index] = set(g.sharers)
                assert p not in g.sharers
    for gi, sharers in owner_side.items():
        users = {q for q in range(P) if gi in referenced[q]}
        owner = next(p for p, r in enumerate(results)
                     if any(g.index == gi and g.owner == p for g in r.nodes))
        assert sharers == users - {owner}
    # every referenced node has exactly one owner somewhere
    assert set(owner_side) == set().union(*referenced)
    assert sum(r.owned for r in results) == results[0].num_global


def test_owner_process_matches_min_support_rank():
    conn = make_conn(2)
    lmax = 3
    geom = geometry_for(conn, lmax)
    forests, ghosts = build(conn, uniform_leaves(conn, 1, lmax), 2, lmax, 2)
    part = global_partition(geom, [tup(o) for o in forests[0].leaves()] +
                            [tup(o) for o in forests[1].leaves()])
    rank_of = {tup(o): p for p, f in enumerate(forests) for o in f.leaves()}
    seen = {}

    def cb(ctx):
        B = point_box(geom, ctx.point)
        seen[B] = determine_owner_process(forests[0], ctx.point)

    iterate(forests[0], ghosts[0], cb, mode="closed")
    iterate(forests[1], ghosts[1], cb, mode="closed")
    assert set(seen) == set(part)
    for B, q in seen.items():
        assert q == min(rank_of[s] for s in part[B])
    # interface between child 0 and child 2 belongs to rank 0; the far corner to rank 1
    assert seen[((0, 4), (4, 4))] == 0
    assert seen[((8, 8), (8, 8))] == 1


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("d,lmax", [(2, 4), (3, 3)])
def test_reconstruct_remote_matches_definition(seed, d, lmax):
    conn = make_conn(d)
    geom = geometry_for(conn, lmax)
    leaves = balanced_leaves(conn, random_leaves(conn, lmax, seed, min_leaves=10), lmax)
    part = global_partition(geom, [tup(o) for o in leaves])
    above = points_above(geom, part)
    forests, ghosts = build(conn, leaves, 1, lmax, d)
    topo = forests[0].topology
    nonempty = 0

    def cb(ctx):
        nonlocal nonempty
        B = point_box(geom, ctx.point)
        got = [tup(o) for o in reconstruct_remote(topo, ctx.point, [s.octant for s in ctx.sides])]
        assert got == remote_referencers(geom, part, B, above)
        nonempty += bool(got)

    iterate(forests[0], ghosts[0], cb)
    assert nonempty > 0


def test_conforming_mesh_has_no_remote_references():
    conn = make_conn(2)
    forests, ghosts = build(conn, uniform_leaves(conn, 2, 3), 1, 3, 2)
    topo = forests[0].topology
    out = []
    iterate(forests[0], ghosts[0],
            lambda ctx: out.extend(reconstruct_remote(topo, ctx.point, [s.octant for s in ctx.sides])))
    assert out == []


def test_one_allgather_and_one_message_per_sharer():
    conn = make_conn(2, (2, 1))
    lmax = 4
    leaves = balanced_leaves(conn, random_leaves(conn, lmax, 8, min_leaves=30), lmax)
    P = 4
    forests, ghosts = build(conn, leaves, P, lmax, 2)
    results, group = run_lnodes(forests, ghosts, 2, trace=True)
    recs = [json.loads(line) for line in group.trace_lines()]
    gathers = [r for r in recs if r["kind"] != "p2p"]
    assert sorted(r["sender"] for r in gathers) == list(range(P))
    assert all(r["kind"] == "allgather" for r in gathers)
    pairs = sorted((r["sender"], r["receiver"]) for r in recs if r["kind"] == "p2p")
    want = sorted({(p, q) for p, r in enumerate(results) for g in r.nodes if g.owner == p
                   for q in g.sharers})
    assert pairs == want


def test_scheduler_independence():
    conn = make_conn(2)
    leaves = balanced_leaves(conn, random_leaves(conn, 4, 3, min_leaves=20), 4)
    forests, ghosts = build(conn, leaves, 3, 4, 2)
    a, ga = run_lnodes(forests, ghosts, 2, mode="roundrobin", trace=True)
    b, gb = run_lnodes(forests, ghosts, 2, mode="parallel", trace=True)
    assert gathered_table(a) == gathered_table(b)
    assert ga.trace_lines() == gb.trace_lines()


def test_order_zero_rejected():
    conn = make_conn(2)
    forests, ghosts = build(conn, uniform_leaves(conn, 1, 3), 1, 3, 2)
    with pytest.raises(ContractError):
        run_lnodes(forests, ghosts, 0)


def test_unbalanced_forest_rejected():
    conn = make_conn(2)
    lmax = 4
    leaves = [Octant(0, 1, (8, 0), lmax), Octant(0, 1, (0, 8), lmax), Octant(0, 1, (8, 8), lmax)]
    corner = Octant(0, 1, (0, 0), lmax)
    fine = corner.child(3).children()
    rest = [corner.child(0), corner.child(1), corner.child(2)]
    leaves = sorted(rest + fine[:3] + fine[3].children() + leaves)
    forests = forests_from_leaves(conn, leaves, 1, lmax)
    (g,) = run(1, lambda comm: build_ghost(comm, forests[0], 2))
    with pytest.raises(ContractError):
        run(1, lambda comm: lnodes(comm, forests[0], g, 1))
