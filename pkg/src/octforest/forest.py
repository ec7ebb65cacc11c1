"""Distributed forest: per-rank sorted leaves, first atoms, and the
collectives that reshape it (partition, balance)."""

import bisect
import json

from .octant import (ContractError, Octant, check_dimension, predecessor_atom,
                     terminal_atom)
from .topology import Topology
from .transport import pack_ints, prefix_sums, unpack_ints


class Forest:
    """Rank ``rank``'s share of a forest of octrees.

    ``trees[t]`` holds the local leaves of tree t in increasing order and
    ``first_atoms`` has one entry per rank plus a terminal marker.
    """

    def __init__(self, conn, rank, size, trees, first_atoms, lmax, topology=None):
        self.conn = conn
        self.dim = conn.dim
        self.lmax = check_dimension(conn.dim, lmax)
        self.rank = rank
        self.size = size
        self.trees = trees
        self.first_atoms = first_atoms
        self._fkeys = [a.key for a in first_atoms]
        self.topology = topology or Topology(conn, self.lmax)
        if len(first_atoms) != size + 1:
            raise ContractError("first atoms need one entry per rank plus a terminal")
        if not any(trees):
            raise ContractError(f"rank {rank} owns no leaves")

    @property
    def num_local(self):
        return sum(len(t) for t in self.trees)

    def leaves(self):
        for tl in self.trees:
            yield from tl

    def tree_offsets(self):
        """Local index of the first leaf of each tree, plus the total."""
        return prefix_sums([len(t) for t in self.trees]) + [self.num_local]

    def locate(self, a):
        """Rank whose subdomain contains atom ``a``."""
        k = a.key
        if k < self._fkeys[0] or k >= self._fkeys[-1]:
            raise ContractError(f"atom {a} outside the forest's atom range")
        return bisect.bisect_right(self._fkeys, k, 0, self.size) - 1

    def rank_range(self, q):
        return self.first_atoms[q], predecessor_atom(self.first_atoms[q + 1])

    def find_local(self, o):
        """Local leaf that equals or contains ``o``, or None."""
        tl = self.trees[o.tree]
        i = bisect.bisect_right(tl, o) - 1
        if i >= 0 and o.is_descendant(tl[i]):
            return tl[i]
        return None

    def with_trees(self, trees):
        return Forest(self.conn, self.rank, self.size, trees, self.first_atoms, self.lmax,
                      self.topology)

    def to_json(self):
        doc = {
            "dim": self.dim,
            "lmax": self.lmax,
            "rank": self.rank,
            "size": self.size,
            "trees": [[[o.level, *o.coords] for o in tl] for tl in self.trees],
            "first_atoms": [[a.tree, *a.coords] for a in self.first_atoms],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, conn, text):
        doc = json.loads(text)
        lmax = doc["lmax"]
        trees = [[Octant(t, e[0], e[1:], lmax) for e in tl] for t, tl in enumerate(doc["trees"])]
        fa = [Octant(e[0], lmax, e[1:], lmax) if e[0] < conn.num_trees
              else terminal_atom(conn.num_trees, conn.dim, lmax) for e in doc["first_atoms"]]
        return cls(conn, doc["rank"], doc["size"], trees, fa, lmax)


def uniform_leaves(conn, level, lmax):
    d = conn.dim
    out = []
    for t in range(conn.num_trees):
        level_list = [Octant.root(t, d, lmax)]
        for _ in range(level):
            level_list = [c for o in level_list for c in o.children()]
        out.extend(level_list)
    return out


def forests_from_leaves(conn, leaves, size, lmax):
    """Split a globally sorted leaf list evenly into ``size`` rank forests."""
    lmax = check_dimension(conn.dim, lmax)
    n = len(leaves)
    if n < size:
        raise ContractError(f"{n} leaves cannot cover {size} nonempty ranks")
    bounds = [q * (n // size) + min(q, n % size) for q in range(size + 1)]
    topo = Topology(conn, lmax)
    firsts = [leaves[bounds[q]].first_atom() for q in range(size)]
    firsts.append(terminal_atom(conn.num_trees, conn.dim, lmax))
    out = []
    for q in range(size):
        trees = [[] for _ in range(conn.num_trees)]
        for o in leaves[bounds[q]:bounds[q + 1]]:
            trees[o.tree].append(o)
        out.append(Forest(conn, q, size, trees, firsts, lmax, topo))
    return out


def new_uniform(conn, size, level, lmax=None):
    lmax = check_dimension(conn.dim, lmax)
    if not 0 <= level <= lmax:
        raise ContractError("level outside [0, lmax]")
    return forests_from_leaves(conn, uniform_leaves(conn, level, lmax), size, lmax)


def refine(forest, predicate, recursive=False):
    """Replace matching leaves by their children; clamps at lmax."""
    trees = []
    for tl in forest.trees:
        out = []
        stack = list(reversed(tl))
        while stack:
            o = stack.pop()
            if o.level < forest.lmax and predicate(o):
                kids = o.children()
                if recursive:
                    stack.extend(reversed(kids))
                else:
                    out.extend(kids)
            else:
                out.append(o)
        trees.append(out)
    return forest.with_trees(trees)


def coarsen(forest, predicate):
    """Merge complete local sibling families whose members all match."""
    nc = 1 << forest.dim
    trees = []
    for tl in forest.trees:
        out = []
        i = 0
        while i < len(tl):
            o = tl[i]
            if o.level > 0 and o.child_id() == 0 and i + nc <= len(tl):
                fam = tl[i:i + nc]
                par = o.parent()
                if all(x.level == o.level and x.parent() == par for x in fam) and \
                        all(predicate(x) for x in fam):
                    out.append(par)
                    i += nc
                    continue
            out.append(o)
            i += 1
        trees.append(out)
    return forest.with_trees(trees)


def _encode_octants(octs):
    flat = []
    for o in octs:
        flat.append(o.tree)
        flat.append(o.level)
        flat.extend(o.coords)
    return pack_ints(flat)


def _decode_octants(data, d, lmax):
    flat = unpack_ints(data)
    w = d + 2
    return [Octant._make(flat[i], flat[i + 1], tuple(flat[i + 2:i + w]), lmax)
            for i in range(0, len(flat), w)]


def gather_leaves(comm, forest):
    """Global sorted leaf list on every rank (test and CLI helper)."""
    parts = comm.allgather([o.to_tuple() for o in forest.leaves()])
    d = forest.dim
    return [Octant._make(t[0], t[1], tuple(t[2:2 + d]), forest.lmax) for p in parts for t in p]


def partition_even(comm, forest):
    """Redistribute leaves so rank counts differ by at most one."""
    P = comm.size
    p = comm.rank
    counts = comm.allgather(forest.num_local)
    n = sum(counts)
    if n < P:
        raise ContractError(f"{n} leaves cannot cover {P} nonempty ranks")
    start = prefix_sums(counts)
    target = [q * (n // P) + min(q, n % P) for q in range(P + 1)]
    local = list(forest.leaves())
    mine = start[p]
    outgoing = {}
    keep = []
    for i, o in enumerate(local):
        g = mine + i
        q = bisect.bisect_right(target, g) - 1
        if q == p:
            keep.append(o)
        else:
            outgoing.setdefault(q, []).append(o)
    for q in range(P):
        if q != p:
            comm.send(q, _encode_octants(outgoing.get(q, [])))
    received = {p: keep}
    for q in range(P):
        if q != p:
            received[q] = _decode_octants(comm.recv(q), forest.dim, forest.lmax)
    merged = [o for q in range(P) for o in received[q]]
    trees = [[] for _ in range(forest.conn.num_trees)]
    for o in merged:
        trees[o.tree].append(o)
    first = merged[0].first_atom()
    firsts = comm.allgather(first.to_tuple())
    fa = [Octant._make(t[0], t[1], tuple(t[2:]), forest.lmax) for t in firsts]
    fa.append(terminal_atom(forest.conn.num_trees, forest.dim, forest.lmax))
    return Forest(forest.conn, p, P, trees, fa, forest.lmax, forest.topology)


def same_level_neighbors(topo, o):
    """Octants of o's level whose closures meet o's closure, o excluded."""
    seen = {}
    for code in topo.bset.codes[:-1]:
        lo_hi = _box(o, code)
        for s, _, _ in topo.support_at(o.tree, lo_hi[0], lo_hi[1], o.level):
            if s.key != o.key:
                seen[s.key] = s
    return list(seen.values())


def _box(o, code):
    h = o.side
    lo = tuple(x + (h if c == 2 else 0) for x, c in zip(o.coords, code))
    hi = tuple(x + (0 if c == 0 else h) for x, c in zip(o.coords, code))
    return lo, hi


def balance_violations(forest, others):
    """Local leaves that are strictly coarser than a neighbor allows.

    ``others`` are extra leaves (ghosts) to check against besides local ones.
    """
    topo = forest.topology
    marked = set()
    for x in list(forest.leaves()) + list(others):
        if x.level < 2:
            continue
        for n in same_level_neighbors(topo, x):
            a = n.ancestor(x.level - 1)
            leaf = forest.find_local(a)
            if leaf is not None and leaf.level < a.level:
                marked.add(leaf.key)
    return marked


def balance(comm, forest):
    """Iterative ripple refinement until every pair of touching leaves
    differs by at most one level."""
    from .ghost import build_ghost

    while True:
        ghost = build_ghost(comm, forest, forest.dim)
        marked = balance_violations(forest, ghost.octants())
        if marked:
            forest = refine(forest, lambda o: o.key in marked)
        if not any(comm.allgather(bool(marked))):
            return forest


def is_balanced_locally(forest, ghost):
    return not balance_violations(forest, ghost.octants())
