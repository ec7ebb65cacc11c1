"""Ghost layers for arbitrarily refined forests.

A local leaf o is sent to rank q when some boundary entity of o whose
dimension is at least d - k touches q's closed subdomain. Which entities of
a support octant a contiguous atom range touches is decided recursively by
``find_range_boundaries``.
"""

import bisect

from .octant import ContractError, Octant, ancestor_id
from .topology import child_boundary_intersection, code_dim
from .transport import pack_ints, unpack_ints


def find_range_boundaries(f, l, s, query):
    """Subset of ``query`` (bitmask over B) whose entities of ``s`` touch the
    closed union of the atoms f..l."""
    if not (f.is_atom and l.is_atom):
        raise ContractError("range ends must be atoms")
    if not (f.is_descendant(s) and l.is_descendant(s)) or f.key > l.key:
        raise ContractError("range must be an ordered pair of descendants of s")
    return _frb(f, l, s, query, _TABLES[len(s.coords)])


_TABLES = {d: [child_boundary_intersection(d, i) for i in range(1 << d)] for d in (2, 3)}


def _frb(f, l, s, query, table):
    lmax = s.lmax
    while True:
        if not query or s.level == lmax:
            return query
        j = ancestor_id(f, s.level + 1)
        k = ancestor_id(l, s.level + 1)
        if j == k:
            s = s.child(j)
            query &= table[j]
            continue
        matched = 0
        for i in range(j + 1, k):
            matched |= query & table[i]
        mj = query & table[j] & ~matched
        cj = s.child(j)
        if mj and f.coords != cj.coords:
            mj = _frb(f, cj.last_atom(), cj, mj, table)
        mk = query & table[k] & ~matched & ~mj
        ck = s.child(k)
        if mk and l.coords != ck.last_atom().coords:
            mk = _frb(ck.first_atom(), l, ck, mk, table)
        return matched | mj | mk


def _insulated(forest, o):
    """True when the 3^d neighborhood of o lies in this rank's atom range."""
    h = o.side
    R = 1 << forest.lmax
    lo = []
    hi = []
    for x in o.coords:
        if x - h < 0 or x + 2 * h > R:
            return False
        lo.append(x - h)
        hi.append(x + 2 * h - 1)
    first = Octant.atom(o.tree, lo, forest.lmax)
    last = Octant.atom(o.tree, hi, forest.lmax)
    p = forest.rank
    return forest.first_atoms[p].key <= first.key and last.key < forest.first_atoms[p + 1].key


def add_ghost(forest, o, k, insulation=True):
    """Ranks q != p whose closed subdomain touches an entity of o of
    dimension >= d - k."""
    d = forest.dim
    if not 1 <= k <= d:
        raise ContractError(f"codimension {k} outside [1, {d}]")
    if insulation and _insulated(forest, o):
        return set()
    topo = forest.topology
    p = forest.rank
    found = set()
    index = topo.bset.index
    for code in topo.bset.codes[:-1]:
        if code_dim(code) < d - k:
            continue
        c = topo.point(o, code)
        if c.dim == 0:
            for a in topo.atom_support(c):
                q = forest.locate(a)
                if q != p:
                    found.add(q)
            continue
        for s, b, _ in topo.support_entries(c):
            if s.key == o.key:
                continue
            fs, ls = s.first_atom(), s.last_atom()
            q_first, q_last = forest.locate(fs), forest.locate(ls)
            bit = 1 << index[b]
            table = _TABLES[d]
            for q in range(q_first, q_last + 1):
                if q == p or q in found:
                    continue
                fq, lq = forest.rank_range(q)
                f = fs if fs.key >= fq.key else fq
                l = ls if ls.key <= lq.key else lq
                if _frb(f, l, s, bit, table):
                    found.add(q)
    return found


class GhostLayer:
    """Remote leaves adjacent to this rank, sorted, with owners.

    ``mirrors[q]`` lists local leaf indices sent to rank q, in local order.
    """

    def __init__(self, k, ghosts, owners, num_trees, mirrors):
        self.k = k
        self.ghosts = ghosts
        self.owners = owners
        self.mirrors = mirrors
        keys = [g.key for g in ghosts]
        self._keys = keys
        self.tree_offsets = [bisect.bisect_left([g.tree for g in ghosts], t)
                             for t in range(num_trees + 1)]

    def __len__(self):
        return len(self.ghosts)

    def octants(self):
        return list(self.ghosts)

    def tree_range(self, t):
        return self.tree_offsets[t], self.tree_offsets[t + 1]

    def index_of(self, o):
        i = bisect.bisect_left(self._keys, o.key)
        if i < len(self._keys) and self._keys[i] == o.key:
            return i
        return None

    def to_json_obj(self):
        return {"k": self.k,
                "ghosts": [[g.tree, g.level, *g.coords, q] for g, q in zip(self.ghosts, self.owners)]}


def _encode(octs):
    flat = []
    for o in octs:
        flat.append(o.tree)
        flat.append(o.level)
        flat.extend(o.coords)
    return pack_ints(flat)


def build_ghost(comm, forest, k, insulation=True):
    """Collective: every rank receives the leaves of other ranks that touch
    its closed subdomain at codimension <= k."""
    p = comm.rank
    P = comm.size
    d = forest.dim
    outgoing = {}
    for i, o in enumerate(forest.leaves()):
        for q in add_ghost(forest, o, k, insulation):
            outgoing.setdefault(q, []).append((i, o))
    for q in range(P):
        if q != p:
            comm.send(q, pack_ints([len(outgoing.get(q, []))]))
    for q in range(P):
        if q != p and outgoing.get(q):
            comm.send(q, _encode([o for _, o in outgoing[q]]))
    received = []
    for q in range(P):
        if q == p:
            continue
        n = unpack_ints(comm.recv(q))[0]
        if n:
            flat = unpack_ints(comm.recv(q))
            w = d + 2
            for i in range(0, len(flat), w):
                received.append((Octant._make(flat[i], flat[i + 1], tuple(flat[i + 2:i + w]),
                                              forest.lmax), q))
    received.sort(key=lambda e: e[0].key)
    mirrors = {q: [i for i, _ in lst] for q, lst in sorted(outgoing.items())}
    return GhostLayer(k, [g for g, _ in received], [q for _, q in received],
                      forest.conn.num_trees, mirrors)


def exchange_ghost_data(comm, forest, ghost, payloads):
    """Collective: deliver fixed-size per-leaf payloads to the ranks that
    hold those leaves as ghosts. Returns one payload per ghost."""
    p = comm.rank
    if len(payloads) != forest.num_local:
        raise ContractError("need one payload per local leaf")
    sizes = {len(x) for x in payloads}
    if len(sizes) > 1:
        raise ContractError("payloads must all have the same size")
    size = sizes.pop() if sizes else 0
    for q, idx in ghost.mirrors.items():
        if q != p:
            comm.send(q, b"".join(bytes(payloads[i]) for i in idx))
    result = [None] * len(ghost.ghosts)
    by_owner = {}
    for gi, q in enumerate(ghost.owners):
        by_owner.setdefault(q, []).append(gi)
    for q in sorted(by_owner):
        data = comm.recv(q)
        idx = by_owner[q]
        if len(data) != size * len(idx):
            raise ContractError(f"payload size mismatch from rank {q}")
        for n, gi in enumerate(idx):
            result[gi] = data[n * size:(n + 1) * size]
    return result
