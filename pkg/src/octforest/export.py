"""Legacy ASCII VTK writers for leaf boxes and node positions."""

VTK_VERTEX = 1
VTK_PIXEL = 8
VTK_VOXEL = 11


def _fmt(x):
    return format(x, ".9g")


def _header(title):
    return ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]


def leaves_vtk(leaves, origins, lmax, title="octforest mesh"):
    """Leaf boxes as pixel/voxel cells with rank, tree and level cell data.

    ``leaves`` is a list of (octant, rank) and ``origins[t]`` the integer
    origin of tree t in brick units.
    """
    if not leaves:
        raise ValueError("nothing to export")
    d = leaves[0][0].dim
    R = 1 << lmax
    ncorner = 1 << d
    lines = _header(title)
    lines.append(f"POINTS {len(leaves) * ncorner} double")
    for o, _ in leaves:
        org = origins[o.tree]
        h = o.side
        for c in range(ncorner):
            xyz = [org[j] + (o.coords[j] + (h if c >> j & 1 else 0)) / R for j in range(d)]
            xyz += [0.0] * (3 - d)
            lines.append(" ".join(_fmt(v) for v in xyz))
    lines.append(f"CELLS {len(leaves)} {len(leaves) * (ncorner + 1)}")
    for i in range(len(leaves)):
        base = i * ncorner
        lines.append(" ".join([str(ncorner)] + [str(base + c) for c in range(ncorner)]))
    lines.append(f"CELL_TYPES {len(leaves)}")
    ctype = VTK_PIXEL if d == 2 else VTK_VOXEL
    lines.extend(str(ctype) for _ in leaves)
    lines.append(f"CELL_DATA {len(leaves)}")
    for name, get in (("rank", lambda e: e[1]), ("tree", lambda e: e[0].tree),
                      ("level", lambda e: e[0].level)):
        lines.append(f"SCALARS {name} int 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(str(get(e)) for e in leaves)
    return "\n".join(lines) + "\n"


def points_vtk(points, values, title="octforest nodes"):
    """Vertex cells at ``points`` (3-tuples) with one integer per point."""
    n = len(points)
    lines = _header(title)
    lines.append(f"POINTS {n} double")
    for p in points:
        lines.append(" ".join(_fmt(v) for v in list(p) + [0.0] * (3 - len(p))))
    lines.append(f"CELLS {n} {2 * n}")
    lines.extend(f"1 {i}" for i in range(n))
    lines.append(f"CELL_TYPES {n}")
    lines.extend(str(VTK_VERTEX) for _ in range(n))
    lines.append(f"POINT_DATA {n}")
    lines.append("SCALARS global_index int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(v) for v in values)
    return "\n".join(lines) + "\n"


def parse_vtk(text):
    """Minimal reader for the files written above; used to validate them."""
    tok = text.split("\n")
    if not tok[0].startswith("# vtk DataFile Version") or tok[2] != "ASCII":
        raise ValueError("not a legacy ASCII VTK file")
    if tok[3] != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("not an unstructured grid")
    i = 4
    out = {}
    while i < len(tok):
        line = tok[i]
        if not line:
            i += 1
            continue
        parts = line.split()
        if parts[0] == "POINTS":
            n = int(parts[1])
            out["points"] = [tuple(float(v) for v in tok[i + 1 + j].split()) for j in range(n)]
            i += n + 1
        elif parts[0] == "CELLS":
            n, size = int(parts[1]), int(parts[2])
            cells = [tuple(int(v) for v in tok[i + 1 + j].split()) for j in range(n)]
            if sum(len(c) for c in cells) != size or any(c[0] != len(c) - 1 for c in cells):
                raise ValueError("CELLS size mismatch")
            out["cells"] = [c[1:] for c in cells]
            i += n + 1
        elif parts[0] == "CELL_TYPES":
            n = int(parts[1])
            out["types"] = [int(tok[i + 1 + j]) for j in range(n)]
            i += n + 1
        elif parts[0] in ("CELL_DATA", "POINT_DATA"):
            out.setdefault("data_counts", {})[parts[0]] = int(parts[1])
            i += 1
        elif parts[0] == "SCALARS":
            n = out["data_counts"][list(out["data_counts"])[-1]]
            if tok[i + 1] != "LOOKUP_TABLE default":
                raise ValueError("missing lookup table")
            out.setdefault("scalars", {})[parts[1]] = [int(tok[i + 2 + j]) for j in range(n)]
            i += n + 2
        else:
            raise ValueError(f"unexpected section {parts[0]!r}")
    npts = len(out.get("points", []))
    if any(not 0 <= v < npts for c in out.get("cells", []) for v in c):
        raise ValueError("cell references a missing point")
    if len(out.get("types", [])) != len(out.get("cells", [])):
        raise ValueError("cell type count mismatch")
    return out
