"""Topology iterator: one callback per relevant point with its leaf support.

Recursion runs on an explicit stack. A point's children in the child
partition are visited in decreasing dimension, then canonical order, so a
point always fires before the lower-dimensional points on its boundary
that lie in the same recursion.
"""

import bisect
import itertools
from collections import OrderedDict
from dataclasses import dataclass, field

from .ghost import _TABLES, _frb
from .octant import ContractError, Octant
from .search import split_array
from .topology import child_boundary_intersection, code_dim

OPEN = "open"
CLOSED = "closed"


@dataclass
class Side:
    octant: Octant
    is_local: bool
    index: int  # flattened local index, or index into the ghost layer


@dataclass
class IterationContext:
    point: object
    sides: list
    mode: str
    entries: list = field(repr=False, default=None)


@dataclass
class IterateStats:
    calls: int = 0
    splits: int = 0
    cache_hits: int = 0
    probes: int = 0
    callbacks: int = 0

    @property
    def operations(self):
        return self.splits + self.probes


class _TreeArray:
    """Merged local and ghost leaves of one tree."""

    __slots__ = ("octs", "local", "index", "nlocal")

    def __init__(self, local, local_base, ghosts, ghost_base):
        octs, flags, index = [], [], []
        i = j = 0
        while i < len(local) or j < len(ghosts):
            if j == len(ghosts) or (i < len(local) and local[i].key < ghosts[j].key):
                octs.append(local[i])
                flags.append(True)
                index.append(local_base + i)
                i += 1
            else:
                octs.append(ghosts[j])
                flags.append(False)
                index.append(ghost_base + j)
                j += 1
        self.octs = octs
        self.local = flags
        self.index = index
        counts = [0]
        for f in flags:
            counts.append(counts[-1] + f)
        self.nlocal = counts


class _SplitCache:
    def __init__(self, size, enabled):
        self.size = size
        self.enabled = enabled
        self.data = OrderedDict()

    def get(self, key):
        if not self.enabled:
            return None
        k = self.data.get(key)
        if k is not None:
            self.data.move_to_end(key)
        return k

    def put(self, key, value):
        if not self.enabled:
            return
        self.data[key] = value
        if len(self.data) > self.size:
            self.data.popitem(last=False)


def _normalize_callbacks(callback, d):
    if callable(callback):
        return {dim: callback for dim in range(d + 1)}
    if not isinstance(callback, dict) or not callback:
        raise ContractError("callback must be callable or a non-empty dict by dimension")
    return dict(callback)


def iterate(forest, ghost, callback, mode=OPEN, cache=True, stats=None):
    """Call ``callback(ctx)`` for every point relevant to this rank.

    ``callback`` is one callable or a dict mapping point dimension to a
    callable; dimensions without a callback are skipped and recursion
    below the smallest requested dimension is pruned.
    """
    d = forest.dim
    if ghost is None or ghost.k != d:
        raise ContractError("iterate needs a ghost layer built with k = d")
    if mode not in (OPEN, CLOSED):
        raise ContractError(f"unknown mode {mode!r}")
    callbacks = _normalize_callbacks(callback, d)
    min_dim = min(callbacks)
    stats = stats if stats is not None else IterateStats()
    topo = forest.topology
    offsets = forest.tree_offsets()
    arrays = []
    for t in range(forest.conn.num_trees):
        g0, g1 = ghost.tree_range(t)
        arrays.append(_TreeArray(forest.trees[t], offsets[t], ghost.ghosts[g0:g1], g0))
    state = _State(forest, topo, arrays, callbacks, min_dim, mode, stats,
                   _SplitCache(4 * (forest.lmax + 1) * (1 << d), cache))

    roots = []
    for t in range(forest.conn.num_trees):
        root = Octant.root(t, d, forest.lmax)
        for c in topo.closure(topo.point(root, (1,) * d)):
            if c.octant.tree == t:
                roots.append(c)
    roots.sort(key=lambda c: (-c.dim, c.key))
    stack = []
    for c in reversed(roots):
        if c.dim < min_dim:
            continue
        entries = topo.support_entries(c)
        S = [(s.tree, 0, len(arrays[s.tree].octs)) for s, _, _ in entries]
        stack.append((c, entries, S))
    while stack:
        c, entries, S = stack.pop()
        state.interior(c, entries, S, stack)
    return stats


class _State:
    def __init__(self, forest, topo, arrays, callbacks, min_dim, mode, stats, cache):
        self.forest = forest
        self.topo = topo
        self.arrays = arrays
        self.callbacks = callbacks
        self.min_dim = min_dim
        self.mode = mode
        self.stats = stats
        self.cache = cache
        self.d = forest.dim
        self.isect = [child_boundary_intersection(self.d, i) for i in range(1 << self.d)]

    def split(self, t, s, lo, hi):
        key = (t, s.key, lo, hi)
        k = self.cache.get(key)
        if k is not None:
            self.stats.cache_hits += 1
            return k
        self.stats.splits += 1
        k = split_array(self.arrays[t].octs, s, lo, hi)
        self.cache.put(key, k)
        return k

    def interior(self, c, entries, S, stack):
        stats = self.stats
        stats.calls += 1
        arrays = self.arrays
        if not any(arrays[t].nlocal[hi] - arrays[t].nlocal[lo] for t, lo, hi in S):
            return
        found = []
        stop = False
        splits = None
        if c.dim > 0:
            splits = []
            bindex = self.topo.bset.index
            for i, (s, b, _) in enumerate(entries):
                t, lo, hi = S[i]
                arr = arrays[t]
                if hi - lo == 1 and arr.octs[lo].key == s.key:
                    stop = True
                    found.append((t, lo))
                    splits.append(None)
                    continue
                k = self.split(t, s, lo, hi)
                splits.append(k)
                bmask = 1 << bindex[b]
                for j in range(1 << self.d):
                    if self.isect[j] & bmask and k[j + 1] - k[j] == 1:
                        if arr.octs[k[j]].level == s.level + 1:
                            found.append((t, k[j]))
        else:
            stop = True
            atoms = self.topo.atom_support(c)
            for i, a in enumerate(atoms):
                t, lo, hi = S[i]
                stats.probes += 1
                arr = arrays[t]
                pos = bisect.bisect_right(arr.octs, a, lo, hi) - 1
                if pos >= lo and a.is_descendant(arr.octs[pos]):
                    found.append((t, pos))
        if stop:
            cb = self.callbacks.get(c.dim)
            if cb is None:
                return
            found = sorted(set(found), key=lambda e: arrays[e[0]].octs[e[1]].key)
            sides = [Side(arrays[t].octs[i], arrays[t].local[i], arrays[t].index[i])
                     for t, i in found]
            if self.relevant(c, entries, S, sides):
                stats.callbacks += 1
                cb(IterationContext(c, sides, self.mode, entries))
            return
        # recurse into the child partition
        lookup = {}
        for j, (s, _, _) in enumerate(entries):
            t, lo, hi = S[j]
            k = splits[j]
            for i in range(1 << self.d):
                lookup[s.child(i).key] = (t, k[i], k[i + 1])
        parts = [e for e in self.topo.part(c) if e.dim >= self.min_dim]
        parts.sort(key=lambda e: (-e.dim, e.key))
        for e in reversed(parts):
            eentries = self.topo.support_entries(e)
            Se = []
            for h, _, _ in eentries:
                sl = lookup.get(h.key)
                if sl is None:
                    raise ContractError(f"support octant {h} of {e} outside parent support")
                Se.append(sl)
            stack.append((e, eentries, Se))

    def relevant(self, c, entries, S, sides):
        if any(s.is_local for s in sides):
            return True
        if self.mode == "open":
            return False
        for side in sides:
            code = self._code_of(c, entries, side.octant)
            if code is None:
                continue
            if self._touches_rank(side.octant, code):
                return True
        return False

    def _code_of(self, c, entries, o):
        """Entity code of c relative to a support leaf having c as an entity."""
        for s, b, _ in entries:
            if s.tree != o.tree:
                continue
            if c.dim > 0:
                if s.key == o.key:
                    return b
            elif o.is_descendant(s):
                # o holds the corner b of s when it contains that corner's atom
                h = s.side
                atom = tuple(x if bb == 0 else x + h - 1 for x, bb in zip(s.coords, b))
                if Octant._make(o.tree, o.lmax, atom, o.lmax).is_descendant(o):
                    return b
        return None

    def _touches_rank(self, s, code):
        """Does some e in bound(s) with c in bound(e) touch rank p's closure?"""
        forest = self.forest
        topo = self.topo
        p = forest.rank
        fp, lp = forest.rank_range(p)
        table = _TABLES[self.d]
        opts = [(cc, 1) if cc != 1 else (1,) for cc in code]
        for ecode in itertools.product(*opts):
            if ecode == code or code_dim(ecode) == self.d:
                continue
            e = topo.point(s, ecode)
            for s2, b2, _ in topo.support_entries(e):
                f2, l2 = s2.first_atom(), s2.last_atom()
                f = f2 if f2.key >= fp.key else fp
                l = l2 if l2.key <= lp.key else lp
                if f.key > l.key:
                    continue
                if _frb(f, l, s2, 1 << topo.bset.index[b2], table):
                    return True
        return False
