"""Closed polyhedral surface triangulations.

A mesh is a watertight, consistently outward-oriented triangulation of a
polyhedron boundary whose triangles each lie in exactly one flat face.
Construction validates manifoldness, orientation and shape regularity and
precomputes the edge connectivity used by the Raviart-Thomas space.
Refinement is red (four similar children) with green closure: triangles
with one hanging node are bisected, and such green pairs are undone and
replaced by their parent's red children as soon as a later refinement
touches them, so greens never stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_RHO_MAX = 20.0


class MeshError(ValueError):
    """Raised when a triangulation violates a mesh invariant."""


@dataclass(frozen=True)
class RefinementRecord:
    """One refinement event: ``children`` partition the union of ``merged``.

    ``merged`` is ``(parent,)`` for plain red splits and green bisections.
    When a green pair is undone, the parent's four red children cover both
    greens jointly; such records list both green indices in ``merged``.
    """

    parent: int
    children: tuple
    level: int
    merged: tuple = None

    def __post_init__(self):
        if self.merged is None:
            object.__setattr__(self, "merged", (self.parent,))


@dataclass
class SurfaceMesh:
    """Closed oriented triangle mesh with precomputed connectivity.

    Parameters
    ----------
    vertices : (V, 3) float array
        Vertex coordinates.
    triangles : (F, 3) int array
        Vertex index triples, consistently oriented with outward normals.
    face_id : (F,) int array
        Label of the flat polyhedron face each triangle lies on.
    green_pairs : (G, 2) int array, optional
        Triangle index pairs that are the two halves of a green bisection.
    level : int
        Generation count (0 for canonical shapes).
    rho_max : float
        Shape-regularity bound on h_T^2 / area_T.

    Attributes
    ----------
    edges : (E, 2) int array
        Unique edges as sorted vertex pairs.
    edge_tris : (E, 2) int array
        The two incident triangles per edge, lower index first.
    tri_edges : (F, 3) int array
        Global edge index of local edge i = (v_i, v_{i+1}).
    tri_edge_forward : (F, 3) bool array
        Whether local edge i runs from the lower to the higher vertex id.
    area, h : (F,) float arrays
        Triangle areas and diameters.
    normal : (F, 3) float array
        Outward unit normals.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    face_id: np.ndarray
    green_pairs: np.ndarray = None
    level: int = 0
    rho_max: float = DEFAULT_RHO_MAX

    edges: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    tri_edge_forward: np.ndarray = field(init=False, repr=False)
    area: np.ndarray = field(init=False, repr=False)
    h: np.ndarray = field(init=False, repr=False)
    normal: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.face_id = np.asarray(self.face_id, dtype=np.int64)
        if self.green_pairs is None:
            self.green_pairs = np.empty((0, 2), dtype=np.int64)
        else:
            self.green_pairs = np.asarray(self.green_pairs, dtype=np.int64).reshape(
                -1, 2
            )
        self._build_geometry()
        self._build_connectivity()
        self._validate()

    # -- construction -------------------------------------------------------

    def _build_geometry(self):
        v = self.vertices[self.triangles]
        cr = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        nrm = np.linalg.norm(cr, axis=1)
        if np.any(nrm <= 0.0):
            raise MeshError(
                f"degenerate triangle {int(np.argmin(nrm))} has zero area"
            )
        self.area = 0.5 * nrm
        self.normal = cr / nrm[:, None]
        el = np.stack(
            [
                np.linalg.norm(v[:, 1] - v[:, 0], axis=1),
                np.linalg.norm(v[:, 2] - v[:, 1], axis=1),
                np.linalg.norm(v[:, 0] - v[:, 2], axis=1),
            ],
            axis=1,
        )
        self.h = el.max(axis=1)

    def _build_connectivity(self):
        f = len(self.triangles)
        tails = self.triangles
        heads = self.triangles[:, [1, 2, 0]]
        lo = np.minimum(tails, heads)
        hi = np.maximum(tails, heads)
        keys = np.stack([lo.ravel(), hi.ravel()], axis=1)
        self.edges, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts != 2):
            bad = self.edges[int(np.argmax(counts != 2))]
            word = "boundary" if counts[np.argmax(counts != 2)] < 2 else "non-manifold"
            raise MeshError(
                f"{word} edge ({int(bad[0])}, {int(bad[1])}): "
                f"every edge of a closed surface has exactly two triangles"
            )
        self.tri_edges = inverse.reshape(f, 3)
        self.tri_edge_forward = (tails < heads).reshape(f, 3)

        order = np.argsort(inverse, kind="stable")
        tri_of_slot = order // 3
        self.edge_tris = np.sort(tri_of_slot.reshape(-1, 2), axis=1)

        fwd = self.tri_edge_forward.ravel()[order].reshape(-1, 2)
        if np.any(fwd[:, 0] == fwd[:, 1]):
            e = int(np.argmax(fwd[:, 0] == fwd[:, 1]))
            raise MeshError(
                f"orientation flip across edge "
                f"({int(self.edges[e, 0])}, {int(self.edges[e, 1])})"
            )

    def _validate(self):
        v, e, f = len(self.vertices), len(self.edges), len(self.triangles)
        if v - e + f != 2:
            raise MeshError(f"Euler relation violated: V-E+F = {v - e + f} != 2")
        if _signed_volume(self.vertices, self.triangles) <= 0.0:
            raise MeshError("mesh is oriented inward (negative enclosed volume)")
        rho = self.h**2 / self.area
        if np.any(rho > self.rho_max):
            t = int(np.argmax(rho))
            raise MeshError(
                f"triangle {t} violates shape regularity: "
                f"h^2/area = {rho[t]:.3g} > {self.rho_max:g}"
            )
        for fid in np.unique(self.face_id):
            sel = self.face_id == fid
            n0 = self.normal[sel][0]
            if np.any(np.abs(self.normal[sel] @ n0 - 1.0) > 1e-10):
                raise MeshError(f"face {int(fid)} is not planar (normals differ)")
            pts = self.vertices[np.unique(self.triangles[sel])]
            off = (pts - pts[0]) @ n0
            if np.any(np.abs(off) > 1e-10 * max(1.0, np.abs(pts).max())):
                raise MeshError(f"face {int(fid)} is not planar (offsets differ)")

    # -- queries -------------------------------------------------------------

    def edge_length(self, e=None):
        """Lengths of all edges, or of the given edge indices."""
        idx = slice(None) if e is None else e
        ab = self.vertices[self.edges[idx]]
        return np.linalg.norm(ab[..., 1, :] - ab[..., 0, :], axis=-1)

    def edge_normals(self):
        """In-plane outward unit normal of each local edge, (F, 3, 3).

        Entry [t, i] is coplanar with triangle t and points away from the
        vertex opposite local edge i = (v_i, v_{i+1}).
        """
        v = self.vertices[self.triangles]
        tang = v[:, [1, 2, 0]] - v
        tang /= np.linalg.norm(tang, axis=2)[:, :, None]
        return np.cross(tang, self.normal[:, None, :])

    def shape_ratios(self):
        """Per-triangle shape-regularity ratio h_T^2 / area_T."""
        return self.h**2 / self.area

    def is_green(self):
        """Boolean mask of triangles that are halves of a green pair."""
        mask = np.zeros(len(self.triangles), dtype=bool)
        mask[self.green_pairs.ravel()] = True
        return mask


def _signed_volume(vertices, triangles):
    v = vertices[triangles]
    return np.sum(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2]))) / 6.0


# -- canonical shapes ---------------------------------------------------------


def _quad(a, b, c, d):
    # Two triangles of the quad a-b-c-d with its winding.
    return [(a, b, c), (a, c, d)]


def build_canonical(shape: str, scale: float = 1.0) -> SurfaceMesh:
    """Construct a canonical closed polyhedron surface.

    Parameters
    ----------
    shape : {"cube", "l_bracket", "tetrahedron"}
        "cube" is the axis-aligned cube [0, scale]^3 (6 faces, 12
        triangles); "tetrahedron" is regular with edge length ``scale``;
        "l_bracket" is an L-shaped prism (8 flat faces).
    scale : float
        Linear size, > 0.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if shape == "cube":
        g = np.array(
            [[x, y, z] for z in (0.0, 1.0) for y in (0.0, 1.0) for x in (0.0, 1.0)]
        )
        quads = [
            ((0, 2, 3, 1), 0),  # z = 0
            ((4, 5, 7, 6), 1),  # z = 1
            ((0, 1, 5, 4), 2),  # y = 0
            ((2, 6, 7, 3), 3),  # y = 1
            ((0, 4, 6, 2), 4),  # x = 0
            ((1, 3, 7, 5), 5),  # x = 1
        ]
        tris, fid = [], []
        for q, i in quads:
            tris += _quad(*q)
            fid += [i, i]
        return SurfaceMesh(g * scale, np.array(tris), np.array(fid))
    if shape == "tetrahedron":
        g = np.array(
            [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
        ) * (scale / (2.0 * np.sqrt(2.0)))
        tris = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
        return SurfaceMesh(g, tris, np.arange(4))
    if shape == "l_bracket":
        base = np.array(
            [
                [0, 0], [0.5, 0], [1, 0],          # 0 1 2
                [0, 0.5], [0.5, 0.5], [1, 0.5],    # 3 4 5
                [0, 1], [0.5, 1],                  # 6 7
            ]
        )
        lo = np.hstack([base, np.zeros((8, 1))])
        hi = np.hstack([base, np.full((8, 1), 0.5)])
        g = np.vstack([lo, hi]) * scale
        top = lambda i: i + 8
        cap = _quad(0, 1, 4, 3) + _quad(1, 2, 5, 4) + _quad(3, 4, 7, 6)
        tris, fid = [], []
        for t in cap:  # bottom, z = 0, normal -z
            tris.append(t[::-1])
            fid.append(0)
        for t in cap:  # top, z = 0.5
            tris.append(tuple(top(i) for i in t))
            fid.append(1)
        sides = [
            ([0, 1, 2], 2),  # y = 0
            ([2, 5], 3),     # x = 1
            ([5, 4], 4),     # y = 0.5, x in [0.5, 1]
            ([4, 7], 5),     # x = 0.5, y in [0.5, 1]
            ([7, 6], 6),     # y = 1
            ([6, 3, 0], 7),  # x = 0
        ]
        for loop, i in sides:
            for a, b in zip(loop[:-1], loop[1:]):
                tris += _quad(a, b, top(b), top(a))
                fid += [i, i]
        return SurfaceMesh(g, np.array(tris), np.array(fid))
    raise ValueError(f"unknown canonical shape: {shape!r}")


# -- refinement ---------------------------------------------------------------


def refine_uniform(mesh: SurfaceMesh):
    """Red-refine every triangle.

    Returns
    -------
    (SurfaceMesh, list of RefinementRecord)
        Each input triangle's record lists its four similar children.
        Green pairs in the input are undone first (their records carry
        both halves in ``merged``).
    """
    return refine_marked(mesh, range(len(mesh.triangles)))


def _green_parent(mesh, g1, g2):
    """Vertices (a, b, c) of the undone parent; greens are (c,a,m),(c,m,b)."""
    t1, t2 = set(mesh.triangles[g1]), set(mesh.triangles[g2])
    shared = t1 & t2
    a = (t1 - shared).pop()
    b = (t2 - shared).pop()
    va, vb = mesh.vertices[a], mesh.vertices[b]
    mid = 0.5 * (va + vb)
    m, c = sorted(shared, key=lambda i: np.linalg.norm(mesh.vertices[i] - mid))
    # Recover the parent with the orientation of the first green child.
    tri1 = list(mesh.triangles[g1])
    i = tri1.index(a)
    if tri1[(i + 1) % 3] == m:
        return a, b, c, m
    return b, a, c, m


def refine_marked(mesh: SurfaceMesh, marked):
    """Red-refine the marked triangles and close hanging nodes.

    Marked triangles are split into four similar children.  Neighbors left
    with two or three hanging nodes are red-refined as well; one hanging
    node is closed by a green bisection.  A green pair of the input mesh is
    undone (replaced by its parent's red children) as soon as marking or a
    neighbor's new midpoint touches either half; untouched pairs pass
    through unchanged.

    Returns
    -------
    (SurfaceMesh, list of RefinementRecord)

    Raises
    ------
    MeshError
        If the refined mesh would violate the shape-regularity bound.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64).reshape(-1))
    if marked.size and (marked.min() < 0 or marked.max() >= len(mesh.triangles)):
        raise ValueError("marked indices out of range")

    pair_of = {}
    for pi, gp in enumerate(mesh.green_pairs):
        pair_of[int(gp[0])] = pi
        pair_of[int(gp[1])] = pi
    # Pair geometry: parent (a, b, c) with the pre-split edge (a, b) whose
    # midpoint m already exists.
    pairs = [
        _green_parent(mesh, int(g1), int(g2)) for g1, g2 in mesh.green_pairs
    ]

    red = np.zeros(len(mesh.triangles), dtype=bool)   # non-green triangles
    undo = np.zeros(len(mesh.green_pairs), dtype=bool)
    for i in marked:
        if int(i) in pair_of:
            undo[pair_of[int(i)]] = True
        else:
            red[i] = True

    def skey(p, q):
        return (p, q) if p < q else (q, p)

    tri_keys = [
        [skey(int(t[j]), int(t[(j + 1) % 3])) for j in range(3)]
        for t in mesh.triangles
    ]
    is_green = mesh.is_green()

    # Fix point: a red split of a triangle puts new midpoints on its three
    # edges; an undone pair only on the parent edges (b,c) and (c,a) (the
    # midpoint of (a,b) already exists).  Two or more new midpoints force a
    # red split; on a green pair any touch, including on the half edges
    # (a,m), (m,b), forces the undo.
    while True:
        new_mid = set()
        for t in np.flatnonzero(red):
            new_mid.update(tri_keys[t])
        for pi in np.flatnonzero(undo):
            a, b, c, _m = pairs[pi]
            new_mid.add(skey(b, c))
            new_mid.add(skey(c, a))
        changed = False
        for t in np.flatnonzero(~red & ~is_green):
            if sum(e in new_mid for e in tri_keys[t]) >= 2:
                red[t] = True
                changed = True
        for pi in np.flatnonzero(~undo):
            a, b, c, m = pairs[pi]
            touch = (
                skey(b, c) in new_mid
                or skey(c, a) in new_mid
                or skey(a, m) in new_mid
                or skey(m, b) in new_mid
            )
            if touch:
                undo[pi] = True
                changed = True
        if not changed:
            break

    if not red.any() and not undo.any():
        return mesh, []

    vertices = list(mesh.vertices)
    midpoint = {}

    def mid(p, q):
        e = skey(p, q)
        if e not in midpoint:
            midpoint[e] = len(vertices)
            vertices.append(0.5 * (mesh.vertices[e[0]] + mesh.vertices[e[1]]))
        return midpoint[e]

    # Create all midpoints up front so the bisection pass sees every split
    # edge regardless of emission order.  The split edge of an undone pair
    # keeps its existing midpoint vertex.
    for pi in np.flatnonzero(undo):
        a, b, _c, m = pairs[pi]
        midpoint[skey(a, b)] = m
    for pi in np.flatnonzero(undo):
        a, b, c, _m = pairs[pi]
        mid(b, c)
        mid(c, a)
    for t in np.flatnonzero(red):
        a, b, c = (int(x) for x in mesh.triangles[t])
        mid(a, b)
        mid(b, c)
        mid(c, a)

    def red_kids(a, b, c):
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        return [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]

    def expand(kids):
        """Green-bisect any kid left with a hanging node on one edge.

        A red child of an undone pair inherits the half edges of the old
        split side; a red neighbor across such a half edge puts a new
        midpoint on it.  At most one edge per kid can be affected.
        """
        out_kids, out_greens = [], []
        for a, b, c in kids:
            cut = [
                (p, q)
                for p, q in ((a, b), (b, c), (c, a))
                if skey(p, q) in midpoint
            ]
            if not cut:
                out_kids.append((a, b, c))
                continue
            assert len(cut) == 1, "red closure left two hanging nodes"
            p, q = cut[0]  # directed along the winding, so o->p->q is cyclic
            m = midpoint[skey(p, q)]
            o = ({a, b, c} - {p, q}).pop()
            out_greens.append((len(out_kids), len(out_kids) + 1))
            out_kids += [(o, p, m), (o, m, q)]
        return out_kids, out_greens

    triangles, face_id, records, greens = [], [], [], []
    new_level = mesh.level + 1

    def emit(kids, local_greens, fid, merged):
        first = len(triangles)
        triangles.extend(kids)
        face_id.extend([fid] * len(kids))
        greens.extend((first + i, first + j) for i, j in local_greens)
        if merged is not None and len(kids) > 1:
            records.append(
                RefinementRecord(
                    merged[0], tuple(range(first, first + len(kids))),
                    new_level, merged,
                )
            )

    done = set()
    for t in range(len(mesh.triangles)):
        if t in done:
            continue
        fid = int(mesh.face_id[t])
        if t in pair_of:
            pi = pair_of[t]
            g1, g2 = (int(x) for x in mesh.green_pairs[pi])
            done.update((g1, g2))
            if undo[pi]:
                a, b, c, _m = pairs[pi]
                emit(*expand(red_kids(a, b, c)), fid, (g1, g2))
            else:
                kids = [tuple(mesh.triangles[g1]), tuple(mesh.triangles[g2])]
                emit(kids, [(0, 1)], fid, None)
        elif red[t]:
            a, b, c = (int(x) for x in mesh.triangles[t])
            emit(*expand(red_kids(a, b, c)), fid, (t,))
        else:
            emit(*expand([tuple(int(x) for x in mesh.triangles[t])]), fid, (t,))

    out = SurfaceMesh(
        np.array(vertices),
        np.array(triangles, dtype=np.int64),
        np.array(face_id, dtype=np.int64),
        green_pairs=np.array(greens, dtype=np.int64).reshape(-1, 2),
        level=new_level,
        rho_max=mesh.rho_max,
    )
    return out, records


# -- file I/O -----------------------------------------------------------------


def load_mesh(path, fmt: str = "off", rho_max: float = DEFAULT_RHO_MAX):
    """Read a mesh from an OFF or Gmsh MSH (v2.2 ASCII) file.

    The result is validated like any constructed mesh; closedness or
    orientation failures raise MeshError naming the offending entity.
    Face labels are flat-face groups recovered from coplanarity for OFF
    input, or physical tags for Gmsh input.
    """
    if fmt == "off":
        verts, tris = _parse_off(path)
        fid = _face_groups(verts, tris)
        return SurfaceMesh(verts, tris, fid, rho_max=rho_max)
    if fmt == "gmsh":
        verts, tris, tags = _parse_gmsh(path)
        return SurfaceMesh(verts, tris, tags, rho_max=rho_max)
    raise ValueError(f"unknown mesh format: {fmt!r}")


def save_mesh(mesh: SurfaceMesh, path, fmt: str = "off", cell_data: dict = None):
    """Write a mesh as OFF or legacy ASCII VTK POLYDATA.

    ``cell_data`` (name -> per-triangle array) is emitted as VTK CELL_DATA
    scalars; the OFF writer ignores it.
    """
    if fmt == "off":
        with open(path, "w") as fh:
            fh.write("OFF\n")
            fh.write(f"{len(mesh.vertices)} {len(mesh.triangles)} {len(mesh.edges)}\n")
            for v in mesh.vertices:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            for t in mesh.triangles:
                fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        return
    if fmt == "vtk":
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write("surface mesh\nASCII\nDATASET POLYDATA\n")
            fh.write(f"POINTS {len(mesh.vertices)} double\n")
            for v in mesh.vertices:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            f = len(mesh.triangles)
            fh.write(f"POLYGONS {f} {4 * f}\n")
            for t in mesh.triangles:
                fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
            data = dict(cell_data or {})
            data.setdefault("face_id", mesh.face_id)
            fh.write(f"CELL_DATA {f}\n")
            for name, arr in data.items():
                arr = np.asarray(arr)
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for x in arr:
                    fh.write(f"{float(np.real(x)):.17g}\n")
        return
    raise ValueError(f"unknown mesh format: {fmt!r}")


def _parse_off(path):
    with open(path) as fh:
        lines = fh.readlines()
    rows = [
        (i + 1, ln.strip())
        for i, ln in enumerate(lines)
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not rows or rows[0][1] != "OFF":
        raise MeshError(f"{path}: line {rows[0][0] if rows else 1}: missing OFF header")
    try:
        nv, nf, _ne = (int(x) for x in rows[1][1].split())
    except (IndexError, ValueError) as exc:
        raise MeshError(f"{path}: line {rows[1][0]}: bad count line") from exc
    if len(rows) < 2 + nv + nf:
        raise MeshError(f"{path}: truncated file, expected {nv} vertices, {nf} faces")
    verts = np.empty((nv, 3))
    for i in range(nv):
        ln, text = rows[2 + i]
        parts = text.split()
        if len(parts) != 3:
            raise MeshError(f"{path}: line {ln}: expected 3 coordinates")
        verts[i] = [float(x) for x in parts]
    tris = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        ln, text = rows[2 + nv + i]
        parts = text.split()
        if len(parts) < 4 or parts[0] != "3":
            raise MeshError(f"{path}: line {ln}: only triangle faces are supported")
        tris[i] = [int(x) for x in parts[1:4]]
    return verts, tris


def _parse_gmsh(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    try:
        i = lines.index("$MeshFormat")
        version = lines[i + 1].split()[0]
    except ValueError as exc:
        raise MeshError(f"{path}: missing $MeshFormat section") from exc
    if not version.startswith("2."):
        raise MeshError(f"{path}: unsupported MSH version {version}, expected 2.2")
    i = lines.index("$Nodes")
    nn = int(lines[i + 1])
    ids, coords = [], []
    for row in lines[i + 2 : i + 2 + nn]:
        parts = row.split()
        ids.append(int(parts[0]))
        coords.append([float(x) for x in parts[1:4]])
    renum = {nid: k for k, nid in enumerate(ids)}
    i = lines.index("$Elements")
    ne = int(lines[i + 1])
    tris, tags = [], []
    for row in lines[i + 2 : i + 2 + ne]:
        parts = [int(x) for x in row.split()]
        etype, ntags = parts[1], parts[2]
        if etype != 2:
            continue
        tags.append(parts[3] if ntags else 0)
        tris.append([renum[p] for p in parts[3 + ntags :]])
    if not tris:
        raise MeshError(f"{path}: no triangle elements found")
    return np.array(coords), np.array(tris, dtype=np.int64), np.array(tags)


def _face_groups(verts, tris):
    v = verts[tris]
    cr = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    n = cr / np.linalg.norm(cr, axis=1)[:, None]
    off = np.einsum("ij,ij->i", n, v[:, 0])
    scale = max(1.0, np.abs(verts).max())
    key = np.round(np.hstack([n, off[:, None] / scale]) / 1e-9).astype(np.int64)
    _, fid = np.unique(key, axis=0, return_inverse=True)
    return fid
