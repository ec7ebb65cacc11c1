"""Points (an octant together with one of its faces, edges, corners or its
volume) and the set constructions built on them: closure, boundary,
support, atom support, children and the child partition.

A boundary entity of an octant is written as a per-axis code: 0 for the
low side, 2 for the high side, 1 where the entity spans the octant. The
volume is all ones. The B index of an entity orders corners, then edges
(3D), then faces, then the volume.
"""

import itertools

from .connectivity import compose, invert
from .octant import ContractError, Octant


class BoundarySet:
    """Index tables for the 3^d entities of an octant in dimension d."""

    def __init__(self, d):
        self.d = d
        codes = []
        names = []
        for i in range(1 << d):
            codes.append(tuple(2 * (i >> j & 1) for j in range(d)))
            names.append(f"c{i}")
        if d == 3:
            for e in range(12):
                axis = e // 4
                others = [j for j in range(3) if j != axis]
                code = [1, 1, 1]
                code[others[0]] = 2 * (e & 1)
                code[others[1]] = 2 * (e >> 1 & 1)
                codes.append(tuple(code))
                names.append(f"e{e}")
        for f in range(2 * d):
            code = [1] * d
            code[f // 2] = 2 * (f % 2)
            codes.append(tuple(code))
            names.append(f"f{f}")
        codes.append((1,) * d)
        names.append("v0")
        self.codes = codes
        self.names = names
        self.index = {c: i for i, c in enumerate(codes)}
        self.by_name = {n: i for i, n in enumerate(names)}
        self.volume = len(codes) - 1
        self.full_mask = (1 << self.volume) - 1
        self.child_isect = [self._rule_mask(i) for i in range(1 << d)]

    def _rule_mask(self, i):
        mask = 0
        for b, code in enumerate(self.codes[:-1]):
            if all(c == 1 or c == 2 * (i >> j & 1) for j, c in enumerate(code)):
                mask |= 1 << b
        return mask

    def mask_of(self, names):
        m = 0
        for n in names:
            m |= 1 << self.by_name[n]
        return m

    def names_of(self, mask):
        return [self.names[b] for b in range(len(self.names)) if mask >> b & 1]

    def dim_of(self, b):
        return sum(1 for c in self.codes[b] if c == 1)


BOUNDARY = {2: BoundarySet(2), 3: BoundarySet(3)}

# Child-boundary intersections in 3D, one row per child index.
CHILD_TABLE_3D = (
    ("c0", "e0", "e4", "e8", "f0", "f2", "f4"),
    ("c1", "e0", "e5", "e9", "f1", "f2", "f4"),
    ("c2", "e1", "e4", "e10", "f0", "f3", "f4"),
    ("c3", "e1", "e5", "e11", "f1", "f3", "f4"),
    ("c4", "e2", "e6", "e8", "f0", "f2", "f5"),
    ("c5", "e2", "e7", "e9", "f1", "f2", "f5"),
    ("c6", "e3", "e6", "e10", "f0", "f3", "f5"),
    ("c7", "e3", "e7", "e11", "f1", "f3", "f5"),
)
_CHILD_MASKS = {
    2: tuple(BOUNDARY[2].child_isect),
    3: tuple(BOUNDARY[3].mask_of(row) for row in CHILD_TABLE_3D),
}


def child_boundary_intersection(d, i):
    """Bitmask of the boundary entities of an octant touched by child ``i``."""
    if d not in _CHILD_MASKS:
        raise ContractError("dimension must be 2 or 3")
    if not 0 <= i < 1 << d:
        raise ContractError(f"child index {i} out of range")
    return _CHILD_MASKS[d][i]


def code_dim(code):
    return sum(1 for c in code if c == 1)


def entity_box(o, code):
    """Closed box (lo, hi) of an octant entity in tree coordinates."""
    h = o.side
    lo, hi = [], []
    for x, c in zip(o.coords, code):
        if c == 0:
            lo.append(x)
            hi.append(x)
        elif c == 1:
            lo.append(x)
            hi.append(x + h)
        else:
            lo.append(x + h)
            hi.append(x + h)
    return tuple(lo), tuple(hi)


class Point:
    """Canonical representative of a point: the least support octant and
    the entity code relative to it."""

    __slots__ = ("octant", "code", "level", "dim", "key")

    def __init__(self, octant, code, level, dim):
        self.octant = octant
        self.code = code
        self.level = level
        self.dim = dim
        self.key = (octant.key, code)

    @property
    def b(self):
        return BOUNDARY[len(self.code)].index[self.code]

    @property
    def name(self):
        return BOUNDARY[len(self.code)].names[self.b]

    def __eq__(self, other):
        return isinstance(other, Point) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __lt__(self, other):
        return self.key < other.key

    def __repr__(self):
        return f"Point({self.octant!r}, {self.name})"


class Topology:
    """Point constructions for one connectivity and maximum level."""

    def __init__(self, conn, lmax):
        self.conn = conn
        self.d = conn.dim
        self.lmax = lmax
        self.R = 1 << lmax
        self.bset = BOUNDARY[self.d]
        self._points = {}

    def support_at(self, tree, lo, hi, level):
        """Support entries (octant, code, map) of the domain box at ``level``.

        ``map`` takes coordinates of ``tree`` to the entry's tree. Sorted by
        octant order.
        """
        h = 1 << (self.lmax - level)
        R = self.R
        entries = []
        for t, blo, bhi, amap in self.conn.representations(tree, lo, hi, R):
            options = []
            for l, u in zip(blo, bhi):
                if l < u:
                    options.append(((l, 1),))
                else:
                    opt = []
                    if l - h >= 0:
                        opt.append((l - h, 2))
                    if l + h <= R:
                        opt.append((l, 0))
                    options.append(opt)
            for combo in itertools.product(*options):
                coords = tuple(c for c, _ in combo)
                code = tuple(b for _, b in combo)
                entries.append((Octant._make(t, level, coords, self.lmax), code, amap))
        entries.sort(key=lambda e: e[0].key)
        return entries

    def zero_level(self, coords):
        tz = self.lmax
        for x in coords:
            if x:
                tz = min(tz, (x & -x).bit_length() - 1)
        return self.lmax - tz

    def point(self, o, code):
        """Canonical point for the entity ``code`` of octant ``o``."""
        ck = (o.key, code)
        p = self._points.get(ck)
        if p is not None:
            return p
        dim = code_dim(code)
        if dim == self.d:
            p = Point(o, code, o.level, dim)
        else:
            lo, hi = entity_box(o, code)
            level = o.level if dim else self.zero_level(lo)
            s, b, _ = self.support_at(o.tree, lo, hi, level)[0]
            p = Point(s, b, level, dim)
        if len(self._points) > 500000:
            self._points.clear()
        self._points[ck] = p
        return p

    def box(self, c):
        return entity_box(c.octant, c.code)

    def support_entries(self, c):
        if c.dim == self.d:
            return [(c.octant, c.code, self.conn._ident)]
        lo, hi = self.box(c)
        return self.support_at(c.octant.tree, lo, hi, c.level)

    def support(self, c):
        return [e[0] for e in self.support_entries(c)]

    def atom_support(self, c):
        """Atoms touching a 0-point, aligned with ``support(c)``."""
        if c.dim != 0:
            raise ContractError("atom support is defined for 0-points only")
        out = []
        for s, code, _ in self.support_entries(c):
            h = s.side
            coords = tuple(x if b == 0 else x + h - 1 for x, b in zip(s.coords, code))
            out.append(Octant._make(s.tree, self.lmax, coords, self.lmax))
        return out

    def closure(self, c):
        opts = [(0, 1, 2) if b == 1 else (b,) for b in c.code]
        return [self.point(c.octant, code) for code in itertools.product(*opts)]

    def boundary(self, c):
        return [e for e in self.closure(c) if e.key != c.key]

    def children(self, c):
        if c.dim == 0:
            return []
        opts = []
        for b in c.code:
            opts.append(((0, 1), (1, 1)) if b == 1 else (((0, 0),) if b == 0 else ((1, 2),)))
        return [self._child_point(c.octant, combo) for combo in itertools.product(*opts)]

    def part(self, c):
        if c.dim == 0:
            return []
        opts = []
        for b in c.code:
            if b == 1:
                opts.append(((0, 1), (0, 2), (1, 1)))
            else:
                opts.append(((0, 0),) if b == 0 else ((1, 2),))
        return [self._child_point(c.octant, combo) for combo in itertools.product(*opts)]

    def center(self, c):
        """The single 0-point among {c} and part(c)."""
        if c.dim == 0:
            return c
        combo = [(0, 2) if b == 1 else ((0, 0) if b == 0 else (1, 2)) for b in c.code]
        return self._child_point(c.octant, combo)

    def _child_point(self, o, combo):
        i = 0
        for j, (bit, _) in enumerate(combo):
            i |= bit << j
        return self.point(o.child(i), tuple(b for _, b in combo))

    def relative_map(self, entries, k):
        """Map from the tree of ``entries[k]`` to the canonical entry's tree."""
        return compose(entries[0][2], invert(entries[k][2]))

    def boxes_in(self, c, tree):
        """Domain box of c in the coordinates of ``tree`` (or None)."""
        lo, hi = self.box(c)
        for t, blo, bhi, _ in self.conn.representations(c.octant.tree, lo, hi, self.R):
            if t == tree:
                return blo, bhi
        return None

