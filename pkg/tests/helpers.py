"""Seeded forest builders and rank-run shortcuts shared by the tests."""

import random

from octforest.connectivity import build_brick, build_unitcube
from octforest.forest import balance, forests_from_leaves, partition_even
from octforest.ghost import build_ghost, find_range_boundaries
from octforest.octant import Octant
from octforest.topology import BOUNDARY, entity_box
from octforest.transport import run
from oracles import Geometry, all_octants, contains, range_boundaries_brute


def make_conn(dim, shape=None, periodic=None):
    if shape is None:
        return build_unitcube(dim)
    shape = list(shape) + [1] * (3 - len(shape))
    return build_brick(dim, shape[0], shape[1], shape[2], periodic=periodic)


def geometry_for(conn, lmax):
    if conn.brick is None:
        return Geometry(conn.dim, lmax)
    return Geometry(conn.dim, lmax, conn.brick["shape"], conn.brick["periodic"])


def random_leaves(conn, lmax, seed, max_level=None, p=0.45, min_leaves=1, jumpy=False):
    """Random leaf list in forest order. ``jumpy`` favors deep refinement
    next to coarse leaves so 2:1 balance is violated."""
    rng = random.Random(seed)
    max_level = lmax if max_level is None else max_level
    d = conn.dim
    while True:
        out = []
        for t in range(conn.num_trees):
            stack = [Octant.root(t, d, lmax)]
            while stack:
                o = stack.pop()
                prob = p
                if jumpy and o.level > 0:
                    prob = 0.9 if o.child_id() == 0 else 0.15
                if o.level < max_level and rng.random() < prob:
                    stack.extend(reversed(o.children()))
                else:
                    out.append(o)
        if len(out) >= min_leaves:
            return out
        p = min(0.95, p + 0.1)


def ranks_of(leaves, size):
    n = len(leaves)
    bounds = [q * (n // size) + min(q, n % size) for q in range(size + 1)]
    return [leaves[bounds[q]:bounds[q + 1]] for q in range(size)]


def balanced_leaves(conn, leaves, lmax):
    forests = forests_from_leaves(conn, leaves, 1, lmax)
    (f,) = run(1, lambda comm: balance(comm, forests[0]))
    return list(f.leaves())


def build(conn, leaves, size, lmax, k=None, mode="roundrobin"):
    """Forests for ``size`` ranks plus ghost layers of codimension k."""
    forests = forests_from_leaves(conn, leaves, size, lmax)
    if k is None:
        return forests, None

    def body(comm):
        return build_ghost(comm, forests[comm.rank], k)

    return forests, run(size, body, mode=mode)


def balanced_partitioned(conn, leaves, size, lmax):
    forests = forests_from_leaves(conn, leaves, size, lmax)

    def body(comm):
        f = balance(comm, forests[comm.rank])
        return partition_even(comm, f)

    return run(size, body)


def tup(o):
    return o.to_tuple()


def point_box(geom, c):
    """Normalized global box of an implementation point."""
    lo, hi = entity_box(c.octant, c.code)
    org = geom.origin(c.octant.tree)
    return geom.normalize(tuple(a + b for a, b in zip(org, lo)),
                          tuple(a + b for a, b in zip(org, hi)))


def random_descendants(rng, d, lmax):
    """Random sorted strict descendants of a random octant."""
    level = rng.randrange(lmax)
    h = 1 << (lmax - level)
    a = Octant(0, level, [rng.randrange(1 << level) * h for _ in range(d)], lmax)
    leaves = []
    stack = a.children()
    while stack:
        o = stack.pop()
        if o.level < lmax and rng.random() < 0.4:
            stack.extend(o.children())
        elif rng.random() < 0.7:
            leaves.append(o)
    return a, sorted(leaves)


def frb_mismatches(d, lmax):
    """Compare find_range_boundaries with the atom brute force on every
    (s, f, l) triple. Returns (cases, mismatches)."""
    codes = BOUNDARY[d].codes[:-1]
    full = (1 << len(codes)) - 1
    cases = bad = 0
    for t in all_octants(d, lmax):
        s = Octant(t[0], t[1], t[2:], lmax)
        atoms = sorted(Octant(0, lmax, a[2:], lmax) for a in all_octants(d, lmax)
                       if a[1] == lmax and contains(t, a, lmax))
        for i, f in enumerate(atoms):
            mask = 0
            for l in atoms[i:]:
                # grow the range one atom at a time; the brute mask is cumulative
                mask |= range_boundaries_brute(t, [tup(l)], lmax, codes)
                cases += 1
                if find_range_boundaries(f, l, s, full) != mask:
                    bad += 1
    return cases, bad


def linear_scan_owner(geom, leaves, X):
    """Leaf whose half-open reference box holds X, by scanning all leaves."""
    atom = [int(x * geom.R) for x in X]
    hits = []
    for o in leaves:
        lo, hi = geom.box(o.to_tuple())
        if all(l <= a < h for l, a, h in zip(lo, atom, hi)):
            hits.append(o)
    assert len(hits) == 1
    return hits[0]


def reference_points(shape, count, seed):
    rng = random.Random(seed)
    return [tuple(rng.random() * s for s in shape) for _ in range(count)]
