"""Top-down multi-query search over the implicit hierarchy of local leaves."""

from dataclasses import dataclass

from .octant import ContractError, Octant, ancestor_id


def split_array(A, a, lo=0, hi=None, check=False):
    """Split the sorted slice ``A[lo:hi]`` of descendants of ``a`` by child.

    Returns ``k`` with ``2**d + 1`` absolute indices: the descendants of
    child i occupy ``A[k[i]:k[i+1]]``. No copies are made.
    """
    if hi is None:
        hi = len(A)
    nc = 1 << len(a.coords)
    if check:
        for x in A[lo:hi]:
            if not (x.is_descendant(a) and x.level > a.level):
                raise ContractError(f"{x} is not a strict descendant of {a}")
    level = a.level + 1
    k = [lo] + [hi] * nc
    for i in range(1, nc):
        m = k[i - 1]
        while m < k[i]:
            n = m + (k[i] - m) // 2
            c = ancestor_id(A[n], level)
            if c < i:
                m = n + 1
            else:
                for j in range(i, c + 1):
                    k[j] = n
    return k


@dataclass
class SearchStats:
    octants: int = 0
    splits: int = 0
    leaf_matches: int = 0
    branch_matches: int = 0
    octant_calls: int = 0


def search(forest, queries, match, octant_fn=None, stats=None):
    """Descend every local tree, keeping only queries that matched the parent.

    ``match(octant, is_leaf, q)`` is called per surviving query. The optional
    ``octant_fn(octant, is_leaf, queries)`` runs once per visited octant
    before the per-query calls and may prune by returning False.
    """
    stats = stats if stats is not None else SearchStats()
    queries = list(queries)
    d = forest.dim
    for t, A in enumerate(forest.trees):
        if A:
            _search(A, 0, len(A), Octant.root(t, d, forest.lmax), queries, match, octant_fn,
                    stats)
    return stats


def _search(A, lo, hi, a, Q, match, octant_fn, stats):
    if lo == hi:
        return
    is_leaf = hi - lo == 1 and A[lo].key == a.key
    stats.octants += 1
    if octant_fn is not None:
        stats.octant_calls += 1
        if not octant_fn(a, is_leaf, Q):
            return
    matched = []
    for q in Q:
        if is_leaf:
            stats.leaf_matches += 1
        else:
            stats.branch_matches += 1
        if match(a, is_leaf, q):
            matched.append(q)
    if matched and not is_leaf:
        k = split_array(A, a, lo, hi)
        stats.splits += 1
        for i in range(len(k) - 1):
            if k[i] < k[i + 1]:
                _search(A, k[i], k[i + 1], a.child(i), matched, match, octant_fn, stats)
