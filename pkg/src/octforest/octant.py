"""Octants, the Morton total order, hierarchy navigation and atom ranges."""

MAX_LEVEL = {2: 30, 3: 21}
DEFAULT_LMAX = {2: 29, 3: 20}


class ContractError(ValueError):
    """Raised when an operation's precondition is violated."""


def _spread_table(d):
    table = []
    for v in range(256):
        r = 0
        for b in range(8):
            if v >> b & 1:
                r |= 1 << (b * d)
        table.append(r)
    return table


_SPREAD = {2: _spread_table(2), 3: _spread_table(3)}


def morton(coords):
    """Interleave coordinate bits; coordinate j lands on bit j of each group."""
    d = len(coords)
    table = _SPREAD[d]
    result = 0
    for j, x in enumerate(coords):
        shift = j
        while x:
            result |= table[x & 0xFF] << shift
            x >>= 8
            shift += 8 * d
    return result


def demorton(m, d):
    coords = [0] * d
    bit = 0
    while m:
        for j in range(d):
            if m >> j & 1:
                coords[j] |= 1 << bit
        m >>= d
        bit += 1
    return tuple(coords)


def check_dimension(d, lmax=None):
    if d not in (2, 3):
        raise ContractError(f"dimension must be 2 or 3, got {d}")
    if lmax is None:
        return DEFAULT_LMAX[d]
    if not 0 <= lmax <= MAX_LEVEL[d]:
        raise ContractError(f"lmax {lmax} out of range for d={d}")
    return lmax


class Octant:
    """A cube of the refinement hierarchy inside one tree.

    ``key`` packs (tree, Morton index, level) into one integer whose natural
    order is the forest's total order, so sorting and bisection work on it.
    """

    __slots__ = ("tree", "level", "coords", "lmax", "key")

    def __init__(self, tree, level, coords, lmax):
        coords = tuple(int(x) for x in coords)
        d = len(coords)
        check_dimension(d, lmax)
        if tree < 0:
            raise ContractError("negative tree index")
        if not 0 <= level <= lmax:
            raise ContractError(f"level {level} outside [0, {lmax}]")
        h = 1 << (lmax - level)
        for x in coords:
            if x < 0 or x >= 1 << lmax or x % h:
                raise ContractError(f"coordinate {x} invalid at level {level}")
        self.tree = tree
        self.level = level
        self.coords = coords
        self.lmax = lmax
        self.key = _key(tree, coords, level, lmax)

    @classmethod
    def _make(cls, tree, level, coords, lmax):
        o = object.__new__(cls)
        o.tree = tree
        o.level = level
        o.coords = coords
        o.lmax = lmax
        o.key = _key(tree, coords, level, lmax)
        return o

    @classmethod
    def root(cls, tree, d, lmax):
        return cls._make(tree, 0, (0,) * d, lmax)

    @classmethod
    def atom(cls, tree, coords, lmax):
        return cls._make(tree, lmax, tuple(coords), lmax)

    @property
    def dim(self):
        return len(self.coords)

    @property
    def side(self):
        return 1 << (self.lmax - self.level)

    @property
    def is_atom(self):
        return self.level == self.lmax

    def __eq__(self, other):
        return isinstance(other, Octant) and self.key == other.key

    def __ne__(self, other):
        return not self == other

    def __lt__(self, other):
        return self.key < other.key

    def __le__(self, other):
        return self.key <= other.key

    def __gt__(self, other):
        return self.key > other.key

    def __ge__(self, other):
        return self.key >= other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"Octant(t={self.tree}, l={self.level}, x={self.coords})"

    def child(self, i):
        d = len(self.coords)
        if self.level >= self.lmax:
            raise ContractError("atoms have no children")
        if not 0 <= i < 1 << d:
            raise ContractError(f"child index {i} out of range")
        h = 1 << (self.lmax - self.level - 1)
        coords = tuple(x | h if i >> j & 1 else x for j, x in enumerate(self.coords))
        return Octant._make(self.tree, self.level + 1, coords, self.lmax)

    def children(self):
        return [self.child(i) for i in range(1 << len(self.coords))]

    def parent(self):
        if self.level == 0:
            raise ContractError("the root has no parent")
        return self.ancestor(self.level - 1)

    def ancestor(self, level):
        if not 0 <= level <= self.level:
            raise ContractError(f"no ancestor at level {level}")
        mask = ~((1 << (self.lmax - level)) - 1)
        return Octant._make(self.tree, level, tuple(x & mask for x in self.coords), self.lmax)

    def child_id(self):
        """Index of this octant among its siblings."""
        return ancestor_id(self, self.level)

    def is_descendant(self, a):
        """True iff self lies in the subtree rooted at ``a`` (inclusive)."""
        if self.tree != a.tree or a.level > self.level:
            return False
        shift = self.lmax - a.level
        return all(x >> shift == y >> shift for x, y in zip(self.coords, a.coords))

    def first_atom(self):
        return Octant._make(self.tree, self.lmax, self.coords, self.lmax)

    def last_atom(self):
        h = 1 << (self.lmax - self.level)
        return Octant._make(self.tree, self.lmax, tuple(x + h - 1 for x in self.coords), self.lmax)

    def to_tuple(self):
        return (self.tree, self.level) + self.coords


def _key(tree, coords, level, lmax):
    d = len(coords)
    return (((tree << (d * lmax)) | morton(coords)) << 5) | level


def compare(o, r):
    """Three-way comparison under the forest total order."""
    return (o.key > r.key) - (o.key < r.key)


def ancestor_id(o, level):
    """Child index of o's ancestor at ``level`` within that ancestor's parent."""
    if not 0 < level <= o.level:
        raise ContractError(f"ancestor_id needs 0 < {level} <= {o.level}")
    h = 1 << (o.lmax - level)
    i = 0
    for j, x in enumerate(o.coords):
        if x & h:
            i |= 1 << j
    return i


def octant_range(o):
    """First and last atom among the descendants of o."""
    return o.first_atom(), o.last_atom()


def atom_from_morton(tree, m, d, lmax):
    return Octant._make(tree, lmax, demorton(m, d), lmax)


def predecessor_atom(a):
    """The atom directly before ``a`` in the total order over atoms.

    At the start of a tree this is the last atom of the previous tree.
    """
    d = len(a.coords)
    m = morton(a.coords)
    if m > 0:
        return atom_from_morton(a.tree, m - 1, d, a.lmax)
    if a.tree == 0:
        raise ContractError("the first atom of tree 0 has no predecessor")
    last = (1 << a.lmax) - 1
    return Octant._make(a.tree - 1, a.lmax, (last,) * d, a.lmax)


def terminal_atom(num_trees, d, lmax):
    """Marker one past the last atom of the last tree."""
    return Octant._make(num_trees, lmax, (0,) * d, lmax)
