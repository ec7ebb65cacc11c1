"""Macro mesh: trees, face links with coordinate maps, derived corner/edge links.

Face ``f`` of a tree lies on axis ``f // 2`` at the low (even) or high (odd)
side. Corners are numbered by their coordinate bits (x is bit 0). In 3D,
edge ``e`` runs along axis ``e // 4`` and the two remaining axes, in
increasing order, take bits 0 and 1 of ``e % 4``.

Coordinate maps are affine and stored per target axis as
``(source axis, sign, c)`` meaning ``X'[target] = c * R + sign * X[source]``
with ``R = 2**lmax``.
"""

import json
from collections import deque, namedtuple

from .octant import ContractError, Octant

FaceLink = namedtuple("FaceLink", "tree face orientation")
Link = namedtuple("Link", "kind tree entity ntree nentity")


def identity_map(d):
    return tuple((j, 1, 0) for j in range(d))


def compose(outer, inner):
    """Map applying ``inner`` first, then ``outer``."""
    result = []
    for src, sign, c in outer:
        isrc, isign, ic = inner[src]
        result.append((isrc, sign * isign, c + sign * ic))
    return tuple(result)


def invert(amap):
    d = len(amap)
    result = [None] * d
    for tgt, (src, sign, c) in enumerate(amap):
        # X[tgt] = c R + sign X[src]  =>  X[src] = -sign c R + sign X[tgt]
        result[src] = (tgt, sign, -sign * c)
    return tuple(result)


def apply_box(amap, lo, hi, R):
    nlo, nhi = [], []
    for src, sign, c in amap:
        if sign > 0:
            nlo.append(c * R + lo[src])
            nhi.append(c * R + hi[src])
        else:
            nlo.append(c * R - hi[src])
            nhi.append(c * R - lo[src])
    return tuple(nlo), tuple(nhi)


def apply_point(amap, x, R):
    return tuple(c * R + sign * x[src] for src, sign, c in amap)


def corner_of(bits, d):
    return sum(1 << j for j in range(d) if bits[j])


def edge_index(axis, side_bits):
    """3D edge along ``axis``; ``side_bits`` are for the other two axes in order."""
    return 4 * axis + side_bits[0] + 2 * side_bits[1]


def edge_axes(e):
    axis = e // 4
    others = [j for j in range(3) if j != axis]
    r = e % 4
    return axis, {others[0]: r & 1, others[1]: r >> 1 & 1}


class Connectivity:
    """Replicated tree topology; immutable after construction."""

    def __init__(self, dim, num_trees, face_links, corner_links=None, edge_links=None,
                 brick=None):
        if dim not in (2, 3):
            raise ContractError("dimension must be 2 or 3")
        if num_trees < 1:
            raise ContractError("need at least one tree")
        self.dim = dim
        self.num_trees = num_trees
        self.face_links = [list(row) for row in face_links]
        if len(self.face_links) != num_trees or any(len(r) != 2 * dim for r in self.face_links):
            raise ContractError("face link table has the wrong shape")
        self.brick = brick
        self._rep_cache = {}
        self._ident = identity_map(dim)
        try:
            derived_c, derived_e = self._derive_links()
        except ContractError:
            # leave the problem for validate() to report
            derived_c = [[[] for _ in range(1 << dim)] for _ in range(num_trees)]
            derived_e = [[[] for _ in range(12)] for _ in range(num_trees)]
        self.corner_links = derived_c if corner_links is None else corner_links
        if dim == 3:
            self.edge_links = derived_e if edge_links is None else edge_links
        else:
            self.edge_links = None

    # face maps
    def face_map(self, tree, face):
        """Affine map from ``tree`` coordinates to the neighbor across ``face``."""
        link = self.face_links[tree][face]
        if link is None:
            return None
        d = self.dim
        a, s = face // 2, face % 2
        a2, s2 = link.face // 2, link.face % 2
        sigma = -1 if s == s2 else 1
        amap = [None] * d
        amap[a2] = (a, sigma, s2 - sigma * s)
        if d == 2:
            if link.orientation:
                amap[1 - a2] = (1 - a, -1, 1)
            else:
                amap[1 - a2] = (1 - a, 1, 0)
        else:
            for j in range(d):
                if j != a:
                    amap[j] = (j, 1, 0)
        return link.tree, tuple(amap)

    def representations(self, tree, lo, hi, R):
        """All (tree, lo, hi, map) images of a closed box lying on tree faces.

        ``map`` takes coordinates of the starting tree into the image tree.
        Each tree appears at most once; the start comes first.
        """
        start = (tree, lo, hi, self._ident)
        if not any(l == h and (l == 0 or l == R) for l, h in zip(lo, hi)):
            return [start]
        ck = (tree, lo, hi, R)
        cached = self._rep_cache.get(ck)
        if cached is not None:
            return cached
        reps = [start]
        seen = {tree: (lo, hi)}
        queue = deque([start])
        while queue:
            t, blo, bhi, amap = queue.popleft()
            for j in range(self.dim):
                if blo[j] != bhi[j]:
                    continue
                for side, hit in ((0, blo[j] == 0), (1, bhi[j] == R)):
                    if not hit:
                        continue
                    fm = self.face_map(t, 2 * j + side)
                    if fm is None:
                        continue
                    nt, fmap = fm
                    nlo, nhi = apply_box(fmap, blo, bhi, R)
                    if nt in seen:
                        if seen[nt] != (nlo, nhi):
                            raise ContractError(
                                f"box appears twice in tree {nt}; unsupported connectivity")
                        continue
                    seen[nt] = (nlo, nhi)
                    rep = (nt, nlo, nhi, compose(fmap, amap))
                    reps.append(rep)
                    queue.append(rep)
        if len(self._rep_cache) > 200000:
            self._rep_cache.clear()
        self._rep_cache[ck] = reps
        return reps

    def _derive_links(self):
        d = self.dim
        R = 2
        corners = []
        edges = [] if d == 3 else None
        for t in range(self.num_trees):
            row = []
            for c in range(1 << d):
                p = tuple(R * (c >> j & 1) for j in range(d))
                reps = self.representations(t, p, p, R)
                row.append(sorted((nt, corner_of([x == R for x in nlo], d))
                                  for nt, nlo, _, _ in reps[1:]))
            corners.append(row)
            if d == 3:
                erow = []
                for e in range(12):
                    axis, sides = edge_axes(e)
                    lo = [0] * 3
                    hi = [0] * 3
                    hi[axis] = R
                    for j, b in sides.items():
                        lo[j] = hi[j] = R * b
                    reps = self.representations(t, tuple(lo), tuple(hi), R)
                    links = []
                    for nt, nlo, nhi, _ in reps[1:]:
                        naxis = next(j for j in range(3) if nlo[j] != nhi[j])
                        others = [j for j in range(3) if j != naxis]
                        links.append((nt, edge_index(naxis, [int(nlo[j] == R) for j in others])))
                    erow.append(sorted(links))
                edges.append(erow)
        return corners, edges

    def links(self):
        """Every link as a ``Link`` record, faces first."""
        out = []
        for t in range(self.num_trees):
            for f, fl in enumerate(self.face_links[t]):
                if fl is not None:
                    out.append(Link("face", t, f, fl.tree, fl.face))
        if self.edge_links is not None:
            for t in range(self.num_trees):
                for e, row in enumerate(self.edge_links[t]):
                    out.extend(Link("edge", t, e, nt, ne) for nt, ne in row)
        for t in range(self.num_trees):
            for c, row in enumerate(self.corner_links[t]):
                out.extend(Link("corner", t, c, nt, nc) for nt, nc in row)
        return out

    def to_json(self):
        doc = {
            "dim": self.dim,
            "num_trees": self.num_trees,
            "face_links": [[None if fl is None else list(fl) for fl in row]
                           for row in self.face_links],
            "brick": self.brick,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        faces = [[None if fl is None else FaceLink(*fl) for fl in row]
                 for row in doc["face_links"]]
        return cls(doc["dim"], doc["num_trees"], faces, brick=doc.get("brick"))


def _entity_box(kind, entity, d, R):
    """Closed box of a tree face/edge/corner in tree coordinates."""
    lo = [0] * d
    hi = [R] * d
    if kind == "face":
        a, s = entity // 2, entity % 2
        lo[a] = hi[a] = s * R
    elif kind == "corner":
        for j in range(d):
            lo[j] = hi[j] = R * (entity >> j & 1)
    else:
        axis, sides = edge_axes(entity)
        for j, b in sides.items():
            lo[j] = hi[j] = R * b
    return tuple(lo), tuple(hi)


def transform_octant(conn, o, link):
    """Mirror image of ``o`` across a link: the neighbor-tree octant sharing it.

    ``o`` must touch the link's entity. Applying the reverse link returns ``o``.
    """
    d = conn.dim
    R = 1 << o.lmax
    if o.tree != link.tree:
        raise ContractError("octant is not in the link's tree")
    elo, ehi = _entity_box(link.kind, link.entity, d, R)
    h = o.side
    olo = o.coords
    ohi = tuple(x + h for x in olo)
    for j in range(d):
        if ohi[j] < elo[j] or olo[j] > ehi[j]:
            raise ContractError("octant does not touch the link entity")
    reps = conn.representations(o.tree, elo, ehi, R)
    target = [r for r in reps if r[0] == link.ntree]
    if not target:
        raise ContractError("link target not reachable through face links")
    amap = target[0][3]
    nlo, nhi = apply_box(amap, olo, ohi, R)
    coords = []
    for j in range(d):
        lo, hi = nlo[j], nhi[j]
        if hi <= 0:
            lo, hi = -hi, -lo
        elif lo >= R:
            lo, hi = 2 * R - hi, 2 * R - lo
        coords.append(lo)
    return Octant(link.ntree, o.level, coords, o.lmax)


def build_unitcube(dim):
    return Connectivity(dim, 1, [[None] * (2 * dim)], brick=None)


def brick_tree(i, j, k, m, n):
    return i + m * (j + n * k)


def build_brick(dim, m, n, p=1, periodic=None):
    """Axis-aligned grid of trees, optionally periodic per axis."""
    shape = [m, n, p][:dim]
    if any(s < 1 for s in shape):
        raise ContractError("brick extents must be positive")
    periodic = tuple(bool(x) for x in (periodic or (False,) * dim))
    if len(periodic) != dim:
        raise ContractError("one periodic flag per axis")
    for s, per in zip(shape, periodic):
        if per and s < 2:
            raise ContractError("a periodic axis needs at least two trees")
    K = 1
    for s in shape:
        K *= s
    faces = [[None] * (2 * dim) for _ in range(K)]
    for t in range(K):
        pos = [t % m, (t // m) % n, t // (m * n)][:dim]
        for a in range(dim):
            for side in (0, 1):
                q = list(pos)
                q[a] += 1 if side else -1
                if not 0 <= q[a] < shape[a]:
                    if not periodic[a]:
                        continue
                    q[a] %= shape[a]
                qq = q + [0] * (3 - dim)
                nt = brick_tree(qq[0], qq[1], qq[2], m, n)
                faces[t][2 * a + side] = FaceLink(nt, 2 * a + 1 - side, 0)
    return Connectivity(dim, K, faces, brick={"shape": shape, "periodic": list(periodic)})


def validate(conn):
    """Return a list of human-readable problems; empty means valid."""
    diags = []
    d = conn.dim
    for t in range(conn.num_trees):
        for f, fl in enumerate(conn.face_links[t]):
            if fl is None:
                continue
            if not 0 <= fl.tree < conn.num_trees or not 0 <= fl.face < 2 * d:
                diags.append(f"tree {t} face {f}: link target out of range")
                continue
            if fl.tree == t:
                diags.append(f"tree {t} face {f}: self link is unsupported")
            if d == 3 and fl.orientation != 0:
                diags.append(f"tree {t} face {f}: 3D links must be translations")
            if d == 2 and fl.orientation not in (0, 1):
                diags.append(f"tree {t} face {f}: orientation must be 0 or 1")
            if d == 3 and fl.face // 2 != f // 2:
                diags.append(f"tree {t} face {f}: 3D links must join faces on one axis")
            back = conn.face_links[fl.tree][fl.face]
            if back is None or (back.tree, back.face, back.orientation) != (t, f, fl.orientation):
                diags.append(f"tree {t} face {f}: reverse link missing or inconsistent")
    if diags:
        return diags
    try:
        derived_c, derived_e = conn._derive_links()
    except ContractError as exc:
        return [str(exc)]
    for t in range(conn.num_trees):
        for c in range(1 << d):
            if sorted(conn.corner_links[t][c]) != derived_c[t][c]:
                diags.append(f"tree {t} corner {c}: links disagree with face links")
            if len(derived_c[t][c]) + 1 > (4 if d == 2 else 8):
                diags.append(f"tree {t} corner {c}: unsupported valence")
        if d == 3:
            for e in range(12):
                if sorted(conn.edge_links[t][e]) != derived_e[t][e]:
                    diags.append(f"tree {t} edge {e}: links disagree with face links")
                if len(derived_e[t][e]) + 1 > 4:
                    diags.append(f"tree {t} edge {e}: unsupported valence")
    return diags
