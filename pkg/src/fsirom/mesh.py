"""Triangulations with fluid/structure regions and tagged boundary edges."""

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import GeometryFailure, MeshValidationError, ParseError, TangledMesh


class Region(IntEnum):
    FLUID = 0
    STRUCTURE = 1


class Tag(IntEnum):
    INLET = 0
    WALLS = 1
    OUTLET = 2
    INTERFACE = 3


TAG_NAMES = {Tag.INLET: "inlet", Tag.WALLS: "walls", Tag.OUTLET: "outlet",
             Tag.INTERFACE: "interface"}
REGION_NAMES = {Region.FLUID: "fluid", Region.STRUCTURE: "structure"}


@dataclass(frozen=True)
class BenchmarkGeometry:
    """Channel, cylinder and elastic beam of the vibrating-beam benchmark."""

    length: float = 2.5
    height: float = 0.41
    center: tuple = (0.2, 0.2)
    radius: float = 0.05
    beam_length: float = 0.35
    beam_height: float = 0.02
    beam_lower_right: tuple = (0.6, 0.19)
    point_a: tuple = (0.6, 0.2)
    # Defined by the benchmark, never used in reported quantities.
    point_b: tuple = (0.15, 0.2)


def signed_areas(vertices, cells):
    p = vertices[cells]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _edge_keys(a, b, n):
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return lo * n + hi


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of the fluid and structure subdomains.

    Parameters
    ----------
    vertices : (n_vertices, 2) float array
    cells : (n_cells, 3) int array, counter-clockwise
    cell_region : (n_cells,) int array of :class:`Region`
    boundary_edges : (n_edges, 2) int array
    edge_tags : (n_edges,) int array of :class:`Tag`
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_region: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "cells", np.ascontiguousarray(self.cells, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "cell_region", np.ascontiguousarray(self.cell_region, dtype=np.int64).ravel())
        object.__setattr__(self, "boundary_edges", np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "edge_tags", np.ascontiguousarray(self.edge_tags, dtype=np.int64).ravel())
        for arr in (self.vertices, self.cells, self.cell_region, self.boundary_edges, self.edge_tags):
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def areas(self):
        return self._cached("areas", lambda: signed_areas(self.vertices, self.cells))

    @property
    def fluid_cells(self):
        return self._cached("fluid_cells", lambda: np.flatnonzero(self.cell_region == Region.FLUID))

    @property
    def structure_cells(self):
        return self._cached("structure_cells", lambda: np.flatnonzero(self.cell_region == Region.STRUCTURE))

    @property
    def fluid_vertices(self):
        return self._cached("fluid_vertices", lambda: np.unique(self.cells[self.fluid_cells]))

    @property
    def structure_vertices(self):
        return self._cached("structure_vertices", lambda: np.unique(self.cells[self.structure_cells]))

    def tagged_vertices(self, tag):
        return np.unique(self.boundary_edges[self.edge_tags == tag])

    def find_vertex(self, point, tol=1e-12):
        """Index of the vertex at ``point``; ``None`` if absent."""
        d = np.hypot(*(self.vertices - np.asarray(point, dtype=float)).T)
        hits = np.flatnonzero(d <= tol)
        return int(hits[0]) if hits.size == 1 else None

    def with_vertices(self, vertices):
        return Mesh(vertices, self.cells, self.cell_region, self.boundary_edges, self.edge_tags)

    def validate(self):
        """Check orientation, indexing, conformity and boundary tagging."""
        nv = self.n_vertices
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= nv):
            raise MeshValidationError("cell references a missing vertex")
        if self.boundary_edges.size and (self.boundary_edges.min() < 0 or self.boundary_edges.max() >= nv):
            raise MeshValidationError("boundary edge references a missing vertex")
        if self.cell_region.shape[0] != self.n_cells:
            raise MeshValidationError("one region tag per cell required")
        if self.edge_tags.shape[0] != self.boundary_edges.shape[0]:
            raise MeshValidationError("one tag per boundary edge required")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshValidationError("non-finite vertex coordinates")
        bad = np.flatnonzero(self.areas <= 0)
        if bad.size:
            raise MeshValidationError(f"cell {bad[0]} has non-positive signed area {self.areas[bad[0]]:.3e}")

        c = self.cells
        a = np.concatenate([c[:, 0], c[:, 1], c[:, 2]])
        b = np.concatenate([c[:, 1], c[:, 2], c[:, 0]])
        owner = np.tile(np.arange(self.n_cells), 3)
        keys = _edge_keys(a, b, nv)
        uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
        if counts.max(initial=0) > 2:
            raise MeshValidationError("non-manifold edge shared by more than two cells")
        regions = self.cell_region[owner]
        has_fluid = np.zeros(uniq.size, bool)
        has_struct = np.zeros(uniq.size, bool)
        has_fluid[inv[regions == Region.FLUID]] = True
        has_struct[inv[regions == Region.STRUCTURE]] = True
        interface_keys = set(uniq[has_fluid & has_struct].tolist())
        outer_keys = set(uniq[counts == 1].tolist())

        ekeys = _edge_keys(self.boundary_edges[:, 0], self.boundary_edges[:, 1], nv)
        if len(set(ekeys.tolist())) != ekeys.size:
            raise MeshValidationError("duplicate boundary edge")
        tagged_iface = set(ekeys[self.edge_tags == Tag.INTERFACE].tolist())
        tagged_outer = set(ekeys[self.edge_tags != Tag.INTERFACE].tolist())
        if tagged_iface != interface_keys:
            raise MeshValidationError("interface edges must be exactly the fluid/structure shared edges")
        if tagged_outer != outer_keys:
            raise MeshValidationError("boundary tags must cover exactly the mesh boundary")
        return self


def _graded_params(size_at, total):
    """Parameter values from 0 to ``total`` spaced by the local size."""
    ts = [0.0]
    while ts[-1] < total:
        t = ts[-1]
        h = size_at(t)
        h = min(h, size_at(min(total, t + h)))
        ts.append(t + h)
    ts = np.asarray(ts)
    # Pick the interval count whose uniform rescaling distorts spacing least.
    k = len(ts) - 1
    if k > 1 and abs(np.log(total / ts[k - 1])) < abs(np.log(total / ts[k])):
        k -= 1
    return ts[:k + 1] * (total / ts[k])


def _subdivide(p, q, size_fn, include_end=False):
    """Points on segment p->q with spacing no larger than the local size."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    length = np.hypot(*(q - p))
    direction = (q - p) / length
    t = _graded_params(lambda s: size_fn(p + s * direction), length)
    if not include_end:
        t = t[:-1]
    return p[None, :] + t[:, None] * direction[None, :]


def _arc(center, radius, theta0, theta1, size_fn):
    """Points on a circular arc from theta0 to theta1 (end excluded)."""
    cx, cy = center

    def point(theta):
        return np.array([cx + radius * np.cos(theta), cy + radius * np.sin(theta)])

    span = theta1 - theta0

    def step(s):
        h = min(size_fn(point(theta0 + s * np.sign(span))), 2.0 * radius)
        return 2.0 * np.arcsin(0.5 * h / radius)

    t = _graded_params(step, abs(span))[:-1]
    theta = theta0 + np.sign(span) * t
    return np.column_stack([cx + radius * np.cos(theta), cy + radius * np.sin(theta)])


def _loop_segments(start, count):
    idx = np.arange(start, start + count)
    return np.column_stack([idx, np.roll(idx, -1)])


def _min_angles(vertices, cells):
    p = vertices[cells]
    angles = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return np.min(angles, axis=0)


def _tag_boundary(vertices, cells, region, geometry, tol=1e-9):
    """Derive outer-boundary and interface edges with their tags."""
    nv = vertices.shape[0]
    a = np.concatenate([cells[:, 0], cells[:, 1], cells[:, 2]])
    b = np.concatenate([cells[:, 1], cells[:, 2], cells[:, 0]])
    owner = np.tile(np.arange(cells.shape[0]), 3)
    keys = _edge_keys(a, b, nv)
    uniq, first, inv, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    regions = region[owner]
    nf = np.bincount(inv, weights=(regions == Region.FLUID), minlength=uniq.size)
    ns = np.bincount(inv, weights=(regions == Region.STRUCTURE), minlength=uniq.size)
    edges, tags = [], []
    for e in np.flatnonzero((counts == 1) | ((nf > 0) & (ns > 0))):
        i = first[e]
        v0, v1 = a[i], b[i]
        if nf[e] > 0 and ns[e] > 0:
            tag = Tag.INTERFACE
        else:
            x0, x1 = vertices[v0, 0], vertices[v1, 0]
            if abs(x0) < tol and abs(x1) < tol:
                tag = Tag.INLET
            elif abs(x0 - geometry.length) < tol and abs(x1 - geometry.length) < tol:
                tag = Tag.OUTLET
            else:
                tag = Tag.WALLS
        edges.append((v0, v1))
        tags.append(int(tag))
    return np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(tags, dtype=np.int64)


def _triangulate(pslg, size_fn, opts, max_passes=8):
    import triangle

    out = triangle.triangulate(pslg, opts)
    for _ in range(max_passes):
        verts, tris = out["vertices"], out["triangles"]
        centroids = verts[tris].mean(axis=1)
        target = np.array([np.sqrt(3.0) / 4.0 * size_fn(c) ** 2 for c in centroids])
        areas = np.abs(signed_areas(verts, tris))
        if np.all(areas <= 1.05 * target):
            break
        refine = dict(out)
        refine["triangle_max_area"] = target.reshape(-1, 1)
        out = triangle.triangulate(refine, "r" + opts.replace("A", "") + "a")
    return out


def _finish(vertices, cells, region, geometry, min_angle):
    area = signed_areas(vertices, cells)
    flip = area < 0
    cells = cells.copy()
    cells[flip] = cells[flip][:, [0, 2, 1]]
    worst = _min_angles(vertices, cells).min()
    if worst < min_angle - 1e-6:
        raise GeometryFailure(f"minimum angle {worst:.2f} deg violates the {min_angle} deg constraint")
    edges, tags = _tag_boundary(vertices, cells, region, geometry)
    return Mesh(vertices, cells, region, edges, tags).validate()


def generate_benchmark_mesh(target_h, geometry=None, min_angle=20.0, beam_refinement=4.0,
                            grading=0.4, max_size_factor=3.0):
    """Quality Delaunay triangulation of the channel, cylinder and beam.

    Parameters
    ----------
    target_h : float
        Edge length in the fluid around the obstacle, in meters.
    beam_refinement : float
        Ratio between ``target_h`` and the edge length inside the beam.
    grading : float
        Growth rate of the fluid edge length with distance from the obstacle.
    max_size_factor : float
        Cap on the fluid edge length as a multiple of ``target_h``.
    """
    if not 0.002 <= target_h <= 0.1:
        raise GeometryFailure(f"target_h={target_h} outside [0.002, 0.1]")
    g = geometry or BenchmarkGeometry()
    cx, cy = g.center
    xr, yb = g.beam_lower_right
    yt = yb + g.beam_height
    h_beam = target_h / beam_refinement
    h_max = max_size_factor * target_h

    def local_size(p):
        x, y = p
        bx = min(max(x, cx), xr)
        by = min(max(y, yb), yt)
        dbeam = np.hypot(x - bx, y - by)
        if dbeam <= 1e-12 and x >= cx:
            return h_beam
        dcyl = max(0.0, np.hypot(x - cx, y - cy) - g.radius)
        return float(min(h_max, h_beam + grading * dbeam, target_h + grading * min(dcyl, dbeam)))

    theta_a = np.arcsin(0.5 * g.beam_height / g.radius)
    x_attach = cx + g.radius * np.cos(theta_a)

    outer = np.vstack([
        _subdivide((0.0, 0.0), (g.length, 0.0), local_size),
        _subdivide((g.length, 0.0), (g.length, g.height), local_size),
        _subdivide((g.length, g.height), (0.0, g.height), local_size),
        _subdivide((0.0, g.height), (0.0, 0.0), local_size),
    ])
    # Circle loop starts at the top attachment point, runs counter-clockwise
    # around the fluid side to the bottom attachment point, then across the
    # attachment arc inside the beam.
    fluid_arc = _arc((cx, cy), g.radius, theta_a, 2.0 * np.pi - theta_a, lambda p: min(target_h, local_size(p)))
    beam_arc = _arc((cx, cy), g.radius, -theta_a, theta_a, lambda p: h_beam)
    circle = np.vstack([fluid_arc, beam_arc])
    n_outer, n_circle = len(outer), len(circle)
    top_id = n_outer
    bottom_id = n_outer + len(fluid_arc)
    outline = np.vstack([
        _subdivide((x_attach, yb), (xr, yb), lambda p: h_beam)[1:],
        _subdivide((xr, yb), g.point_a, lambda p: h_beam),
        _subdivide(g.point_a, (xr, yt), lambda p: h_beam),
        _subdivide((xr, yt), (x_attach, yt), lambda p: h_beam),
    ])
    first = n_outer + n_circle
    chain = np.concatenate([[bottom_id], np.arange(first, first + len(outline)), [top_id]])
    segments = np.vstack([
        _loop_segments(0, n_outer),
        _loop_segments(n_outer, n_circle),
        np.column_stack([chain[:-1], chain[1:]]),
    ])
    pslg = {
        "vertices": np.vstack([outer, circle, outline]),
        "segments": segments,
        "holes": np.array([[cx, cy]]),
        "regions": np.array([[0.5 * (x_attach + xr), cy, int(Region.STRUCTURE) + 1, 0],
                             [0.5 * g.length, 0.3, int(Region.FLUID) + 1, 0]], dtype=float),
    }
    out = _triangulate(pslg, local_size, f"pq{min_angle:g}YAa{np.sqrt(3) / 4 * h_max ** 2:.6g}")
    verts = np.asarray(out["vertices"], dtype=float)
    tris = np.asarray(out["triangles"], dtype=np.int64)
    region = np.rint(np.asarray(out["triangle_attributes"], dtype=float).ravel()).astype(np.int64) - 1
    if np.any((region != Region.FLUID) & (region != Region.STRUCTURE)):
        raise GeometryFailure("triangulation produced cells without a region")
    mesh = _finish(verts, tris, region, g, min_angle)
    if mesh.find_vertex(g.point_a) is None:
        raise GeometryFailure("no unique vertex at the control point")
    return mesh


def generate_channel_mesh(length, height, target_h, min_angle=20.0):
    """All-fluid rectangular channel, inlet at x=0 and outlet at x=length."""
    def size(p):
        return target_h

    outer = np.vstack([
        _subdivide((0.0, 0.0), (length, 0.0), size),
        _subdivide((length, 0.0), (length, height), size),
        _subdivide((length, height), (0.0, height), size),
        _subdivide((0.0, height), (0.0, 0.0), size),
    ])
    pslg = {"vertices": outer, "segments": _loop_segments(0, len(outer))}
    out = _triangulate(pslg, size, f"pq{min_angle:g}Ya{np.sqrt(3) / 4 * target_h ** 2:.6g}")
    verts = np.asarray(out["vertices"], dtype=float)
    tris = np.asarray(out["triangles"], dtype=np.int64)
    region = np.zeros(len(tris), dtype=np.int64)
    return _finish(verts, tris, region, BenchmarkGeometry(length=length, height=height), min_angle)


def save_mesh(mesh, path):
    """Write ``mesh`` in the ``FSIMESH 1`` text format."""
    lines = ["FSIMESH 1", f"{mesh.n_vertices} {mesh.n_cells} {mesh.boundary_edges.shape[0]}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{a} {b} {c} {REGION_NAMES[Region(r)]}"
              for (a, b, c), r in zip(mesh.cells.tolist(), mesh.cell_region.tolist())]
    lines += [f"{a} {b} {TAG_NAMES[Tag(t)]}"
              for (a, b), t in zip(mesh.boundary_edges.tolist(), mesh.edge_tags.tolist())]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path):
    """Read and validate a mesh written by :func:`save_mesh`."""
    regions = {v: k for k, v in REGION_NAMES.items()}
    tags = {v: k for k, v in TAG_NAMES.items()}
    with open(path, encoding="ascii") as fh:
        lines = [(i + 1, ln.split()) for i, ln in enumerate(fh)]
    lines = [(i, tok) for i, tok in lines if tok]
    if not lines or lines[0][1] != ["FSIMESH", "1"]:
        raise ParseError("missing 'FSIMESH 1' header", 1)
    if len(lines) < 2 or len(lines[1][1]) != 3:
        raise ParseError("expected '<n_vertices> <n_cells> <n_boundary_edges>'", lines[1][0] if len(lines) > 1 else 2)
    try:
        nv, nc, ne = (int(t) for t in lines[1][1])
    except ValueError:
        raise ParseError("counts must be integers", lines[1][0]) from None
    if min(nv, nc, ne) < 0:
        raise ParseError("counts must be nonnegative", lines[1][0])
    body = lines[2:]
    if len(body) != nv + nc + ne:
        raise ParseError(f"expected {nv + nc + ne} records after the count line, found {len(body)}",
                         body[-1][0] if body else lines[1][0])
    vertices = np.empty((nv, 2))
    cells = np.empty((nc, 3), dtype=np.int64)
    region = np.empty(nc, dtype=np.int64)
    edges = np.empty((ne, 2), dtype=np.int64)
    etags = np.empty(ne, dtype=np.int64)
    for k, (lineno, tok) in enumerate(body):
        try:
            if k < nv:
                if len(tok) != 2:
                    raise ValueError("vertex needs 'x y'")
                vertices[k] = [float(tok[0]), float(tok[1])]
            elif k < nv + nc:
                if len(tok) != 4 or tok[3] not in regions:
                    raise ValueError("cell needs 'v0 v1 v2 fluid|structure'")
                cells[k - nv] = [int(t) for t in tok[:3]]
                region[k - nv] = regions[tok[3]]
            else:
                if len(tok) != 3 or tok[2] not in tags:
                    raise ValueError("edge needs 'v0 v1 inlet|walls|outlet|interface'")
                edges[k - nv - nc] = [int(tok[0]), int(tok[1])]
                etags[k - nv - nc] = tags[tok[2]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return Mesh(vertices, cells, region, edges, etags).validate()


def displaced_fluid_mesh(mesh, mesh_displacement, structure_displacement=None):
    """Current configuration under the discrete ALE map.

    Parameters
    ----------
    mesh : Mesh
        Reference configuration.
    mesh_displacement : (n_fluid_vertices, 2) array
        Fluid mesh displacement, ordered like ``mesh.fluid_vertices``.
    structure_displacement : (n_structure_vertices, 2) array, optional
        Structure displacement, ordered like ``mesh.structure_vertices``.
        Applied to structure-only vertices; shared interface vertices follow
        the fluid mesh displacement, which matches it there.

    Raises
    ------
    TangledMesh
        If a displaced fluid cell has non-positive signed area.
    """
    m = np.asarray(mesh_displacement, dtype=float).reshape(-1, 2)
    if m.shape[0] != mesh.fluid_vertices.size:
        raise ValueError("mesh displacement must be given on every fluid vertex")
    x = mesh.vertices.copy()
    if structure_displacement is not None:
        d = np.asarray(structure_displacement, dtype=float).reshape(-1, 2)
        x[mesh.structure_vertices] += d
        x[mesh.fluid_vertices] = mesh.vertices[mesh.fluid_vertices]
    x[mesh.fluid_vertices] += m
    moved = mesh.with_vertices(x)
    fa = moved.areas[mesh.fluid_cells]
    if fa.size and fa.min() <= 0:
        raise TangledMesh(f"fluid cell {mesh.fluid_cells[np.argmin(fa)]} has signed area {fa.min():.3e}")
    return moved


def mesh_quality(mesh, reference=None):
    """Minimum interior angle (degrees) and minimum current/reference area ratio."""
    angle = float(_min_angles(mesh.vertices, mesh.cells).min())
    ratio = 1.0 if reference is None else float((mesh.areas / reference.areas).min())
    return angle, ratio
