"""Analytic distortion of a brick domain and the point-location demo.

The map sends reference coordinates X (global brick units, one tree per
unit cube) to ``x_j = X_j + a / (2 pi) * sin(2 pi X_{j+1})``. It is smooth,
continuous across trees, invertible for ``0 <= a < 1`` and Lipschitz with
constant ``1 + a``.
"""

import math
import random

from .search import SearchStats, search


class DistortionMap:
    def __init__(self, dim, amplitude=0.3, shape=None):
        if not 0 <= amplitude < 1:
            raise ValueError("amplitude must lie in [0, 1)")
        self.dim = dim
        self.a = amplitude
        self.shape = list(shape) if shape else [1] * dim
        self.lipschitz = 1.0 + amplitude

    def forward(self, X):
        d = self.dim
        k = self.a / (2 * math.pi)
        return tuple(X[j] + k * math.sin(2 * math.pi * X[(j + 1) % d]) for j in range(d))

    def inverse(self, x, tol=1e-13, iters=60):
        """Newton iteration on the forward map."""
        d = self.dim
        X = list(x)
        for _ in range(iters):
            F = self.forward(X)
            r = [F[j] - x[j] for j in range(d)]
            if max(abs(v) for v in r) < tol:
                break
            # Jacobian is I plus one off-diagonal entry per row
            off = [self.a * math.cos(2 * math.pi * X[(j + 1) % d]) for j in range(d)]
            X = _solve_cyclic(off, r, X)
        return tuple(X)


def _solve_cyclic(off, r, X):
    """Newton step for J = I + off_j e_j e_{j+1}^T (cyclic)."""
    d = len(off)
    # dX_j + off_j dX_{j+1} = r_j; eliminate cyclically
    # dX_0 = r_0 - off_0 (r_1 - off_1 (... - off_{d-1} dX_0))
    coef = 1.0
    acc = 0.0
    sign = 1.0
    for j in range(d):
        acc += sign * coef * r[j]
        coef *= off[j]
        sign = -sign
    # acc + sign * coef * dX_0 = dX_0  (after full cycle)
    dx0 = acc / (1.0 - sign * coef)
    dX = [0.0] * d
    dX[0] = dx0
    for j in range(d - 1, 0, -1):
        nxt = dX[(j + 1) % d]
        dX[j] = r[j] - off[j] * nxt
    return [X[j] - dX[j] for j in range(d)]


def tree_origin(conn, t):
    if conn.brick is None:
        return (0,) * conn.dim
    m, n = conn.brick["shape"][0], conn.brick["shape"][1]
    pos = [t % m, (t // m) % n, t // (m * n)]
    return tuple(pos[:conn.dim])


def random_points(dmap, count, seed):
    """Physical points, images of uniform reference points."""
    rng = random.Random(seed)
    pts = []
    for _ in range(count):
        X = tuple(rng.random() * s for s in dmap.shape)
        pts.append(dmap.forward(X))
    return pts


class PointLocator:
    """Matcher pair: a bounding-sphere test above the leaves and an exact
    reference-box test at the leaves.

    The sphere of an octant is built once per visit in ``octant_fn`` and
    reused for every query tested against that octant.
    """

    def __init__(self, forest, dmap, points):
        self.forest = forest
        self.dmap = dmap
        self.points = points
        self.R = 1 << forest.lmax
        self.reference = [None] * len(points)
        self.found = {}
        self.sphere = None
        self.sphere_setups = 0
        self.leaf_tests = 0

    def _box(self, o):
        org = tree_origin(self.forest.conn, o.tree)
        R = self.R
        lo = [org[j] + o.coords[j] / R for j in range(len(org))]
        hi = [lo[j] + o.side / R for j in range(len(org))]
        return lo, hi

    def octant_fn(self, o, is_leaf, queries):
        if not is_leaf:
            self.sphere_setups += 1
            lo, hi = self._box(o)
            centre = self.dmap.forward([(a + b) / 2 for a, b in zip(lo, hi)])
            half = math.sqrt(sum(((b - a) / 2) ** 2 for a, b in zip(lo, hi)))
            self.sphere = (centre, self.dmap.lipschitz * half * (1 + 1e-12) + 1e-12)
        return True

    def match(self, o, is_leaf, q):
        x = self.points[q]
        if not is_leaf:
            centre, radius = self.sphere
            return math.dist(centre, x) <= radius
        self.leaf_tests += 1
        X = self.reference[q]
        if X is None:
            X = self.reference[q] = self.dmap.inverse(x)
        lo, hi = self._box(o)
        if all(a <= v < b for a, v, b in zip(lo, X, hi)):
            self.found.setdefault(q, o)
        return True

    def contains(self, o, q):
        X = self.reference[q]
        if X is None:
            X = self.reference[q] = self.dmap.inverse(self.points[q])
        lo, hi = self._box(o)
        return all(a <= v < b for a, v, b in zip(lo, X, hi))


def locate_points(forest, dmap, points, batched=True):
    """Run the demo on one rank. Returns (found map, stats, locator)."""
    loc = PointLocator(forest, dmap, points)
    stats = SearchStats()
    if batched:
        search(forest, range(len(points)), loc.match, loc.octant_fn, stats)
    else:
        for q in range(len(points)):
            search(forest, [q], loc.match, loc.octant_fn, stats)
    return loc.found, stats, loc
