"""Global numbering of continuous Q^n nodes on 2:1 balanced forests.

Element node ``k`` of a leaf has per-axis offsets ``k_j`` in ``[0, n]``
with x fastest. Its entity code is 0 on an axis where ``k_j == 0``, 2
where ``k_j == n`` and 1 otherwise. A hanging element node of a small leaf
is associated with the parent's element node of the same index, which
lies on the coarse neighbor's point or on one of that point's boundary
points.
"""

import itertools
from dataclasses import dataclass

from .connectivity import compose, invert
from .forest import balance_violations
from .iterate import CLOSED, iterate
from .octant import ContractError
from .transport import pack_ints, prefix_sums, unpack_ints


@dataclass
class GlobalNode:
    index: int
    owner: int
    sharers: tuple
    point: tuple
    slot: int


class LNodes:
    """Per-rank result: global nodes and the element-node table."""

    def __init__(self, n, d, nodes, element_nodes, num_global, owned):
        self.order = n
        self.dim = d
        self.nodes = nodes
        self.element_nodes = element_nodes
        self.num_global = num_global
        self.owned = owned

    def global_table(self):
        return [[self.nodes[k].index for k in row] for row in self.element_nodes]

    def shared_with(self):
        """Positions in ``nodes`` shared with each other rank."""
        out = {}
        for pos, g in enumerate(self.nodes):
            for q in g.sharers:
                out.setdefault(q, []).append(pos)
        return out


def element_node_offsets(n, d):
    return [tuple((k // (n + 1) ** j) % (n + 1) for j in range(d)) for k in range((n + 1) ** d)]


def offset_code(off, n):
    return tuple(0 if x == 0 else (2 if x == n else 1) for x in off)


def determine_owner_process(forest, c):
    """Rank owning the first leaf that touches c, without communication."""
    topo = forest.topology
    if c.level == forest.lmax:
        # support octants are atoms already and no finer center exists
        return min(forest.locate(s) for s in topo.support(c))
    e = topo.center(c)
    return min(forest.locate(a) for a in topo.atom_support(e))


def _entity_codes_above(code, d):
    """Codes of entities whose closure contains ``code`` (excluding itself and the volume)."""
    opts = [(b, 1) if b != 1 else (1,) for b in code]
    return [e for e in itertools.product(*opts) if e != code and e != (1,) * d]


def _exact_code(c, entries, o):
    """Code of c relative to leaf o when c is an entity of o, else None."""
    for s, b, _ in entries:
        if s.tree != o.tree:
            continue
        if c.dim > 0:
            if s.key == o.key:
                return b
        elif o.is_descendant(s):
            h = s.side
            corner = tuple(x if bb == 0 else x + h - 1 for x, bb in zip(s.coords, b))
            if all(x <= y < x + o.side for x, y in zip(o.coords, corner)):
                return b
    return None


def reconstruct_remote(topo, c, support):
    """Leaves that reference nodes of c without touching it.

    ``support`` is the complete leaf support of c.
    """
    entries = topo.support_entries(c)
    found = {}
    for o in support:
        b = _exact_code(c, entries, o)
        if b is None or o.is_atom:
            continue
        for ecode in _entity_codes_above(b, topo.d):
            e = topo.point(o, ecode)
            for ch in topo.children(e):
                for s in topo.support(ch):
                    if s.key in found:
                        continue
                    if not any(s.is_descendant(x) for x in support):
                        found[s.key] = s
    return [found[k] for k in sorted(found)]


def _slot(rel, code_canon, offsets, n):
    """Index of a node within its point in the canonical frame."""
    slot = 0
    mult = 1
    for jc, (src, sign, _) in enumerate(rel):
        if code_canon[jc] != 1:
            continue
        off = offsets[src] if sign > 0 else n - offsets[src]
        slot += (off - 1) * mult
        mult *= n - 1
    return slot


def _tree_map(entries, tree):
    for s, _, amap in entries:
        if s.tree == tree:
            return compose(entries[0][2], invert(amap))
    raise ContractError(f"tree {tree} not adjacent to the point")


def lnodes(comm, forest, ghost, n):
    """Collective: number the Q^n nodes of the forest globally."""
    if n < 1:
        raise ContractError("node order must be at least 1")
    d = forest.dim
    if ghost is None or ghost.k != d:
        raise ContractError("lnodes needs a ghost layer built with k = d")
    if balance_violations(forest, ghost.octants()):
        raise ContractError(f"forest is not 2:1 balanced on rank {comm.rank}")
    p = comm.rank
    topo = forest.topology
    offsets = element_node_offsets(n, d)
    codes = [offset_code(off, n) for off in offsets]
    nloc = forest.num_local
    E = [[-1] * len(offsets) for _ in range(nloc)]
    nodes = []  # [point, slot, owner, leaf index, sharers]
    point_start = {}
    pending = {}

    def ident(c):
        return (c.octant.tree, c.octant.level) + c.octant.coords + c.code

    def callback(ctx):
        c = ctx.point
        entries = ctx.entries
        sides = ctx.sides
        count = (n - 1) ** c.dim
        owner = determine_owner_process(forest, c)
        leaf = -1
        sharers = ()
        if owner == p:
            first = sides[0]
            if not first.is_local:
                raise ContractError(f"owner leaf of {c} is not local")
            leaf = first.index
            ranks = {p if s.is_local else ghost.owners[s.index] for s in sides}
            for r in reconstruct_remote(topo, c, [s.octant for s in sides]):
                ranks.add(forest.locate(r.first_atom()))
            ranks.discard(p)
            sharers = tuple(sorted(ranks))
        start = len(nodes)
        key = ident(c)
        for slot in range(count):
            nodes.append([key, slot, owner, leaf, sharers])
        point_start[c.key] = start
        for side in sides:
            if not side.is_local:
                continue
            o = side.octant
            j = side.index
            b = _exact_code(c, entries, o)
            if b is not None:
                rel = _tree_map(entries, o.tree)
                for k, off in enumerate(offsets):
                    if codes[k] == b:
                        E[j][k] = start + _slot(rel, c.code, off, n)
                continue
            # small leaf next to a coarse point
            P = o.parent()
            bP = next(bb for s, bb, _ in entries if s.key == P.key)
            cid = o.child_id()
            rel = _tree_map(entries, o.tree)
            for k, off in enumerate(offsets):
                ck = codes[k]
                inside = True
                for jj in range(d):
                    bit = cid >> jj & 1
                    if bP[jj] == 1:
                        if (ck[jj] == 0 and not bit) or (ck[jj] == 2 and bit):
                            inside = False
                            break
                    elif ck[jj] != bP[jj]:
                        inside = False
                        break
                if not inside:
                    continue
                if ck == bP:
                    E[j][k] = start + _slot(rel, c.code, off, n)
                else:
                    target = topo.point(P, ck)
                    pending.setdefault(target.key, []).append((j, k, P.tree, off))
        for j, k, tree, off in pending.pop(c.key, ()):
            rel = _tree_map(entries, tree)
            E[j][k] = start + _slot(rel, c.code, off, n)

    iterate(forest, ghost, callback, mode=CLOSED)
    if pending:
        raise ContractError("unresolved remote node references")
    if any(x < 0 for row in E for x in row):
        raise ContractError("element node table incomplete")
    return global_numbering(comm, nodes, E, d, n)


def global_numbering(comm, nodes, E, d, n):
    """Number owned nodes in element sweep order, then push them to sharers."""
    p = comm.rank
    M = [-1] * len(nodes)
    m = 0
    for j, row in enumerate(E):
        for k in row:
            g = nodes[k]
            if g[2] == p and g[3] == j and M[k] < 0:
                M[k] = m
                m += 1
    counts = comm.allgather(m)
    t = prefix_sums(counts)
    final = [-1] * len(nodes)
    sharers = [()] * len(nodes)
    outgoing = {}
    for k, g in enumerate(nodes):
        if g[2] == p:
            final[k] = M[k] + t[p]
            sharers[k] = g[4]
            for q in g[4]:
                outgoing.setdefault(q, []).extend(
                    list(g[0]) + [g[1], final[k], len(g[4])] + list(g[4]))
    for q in sorted(outgoing):
        comm.send(q, pack_ints(outgoing[q]))
    lookup = {(tuple(g[0]), g[1]): k for k, g in enumerate(nodes) if g[2] != p}
    width = 2 + 2 * d
    for q in sorted({g[2] for g in nodes if g[2] != p}):
        flat = unpack_ints(comm.recv(q))
        i = 0
        while i < len(flat):
            key = tuple(flat[i:i + width])
            slot, gi, ns = flat[i + width:i + width + 3]
            sh = tuple(flat[i + width + 3:i + width + 3 + ns])
            i += width + 3 + ns
            k = lookup.get((key, slot))
            if k is not None:
                final[k] = gi
                sharers[k] = sh
    if any(x < 0 for x in final):
        raise ContractError(f"rank {p} did not receive every referenced node")
    out = [GlobalNode(final[k], g[2], sharers[k], tuple(g[0]), g[1]) for k, g in enumerate(nodes)]
    return LNodes(n, d, out, E, sum(counts), m)
