"""P1 finite elements on the fluid and structure triangulations.

All element kernels are vectorized over cells: coordinates come in as an
array of shape ``(n_cells, 3, 2)`` and local matrices go out as
``(n_cells, k, k)`` arrays. Vector-valued local blocks use component-major
ordering ``(x0, x1, x2, y0, y1, y2)``.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateCell, DimensionMismatch
from .mesh import Region

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0

BLOCKS = ("u", "p", "d", "m")


@dataclass(frozen=True)
class PhysicalParams:
    """Material data of the coupled problem (SI units).

    ``lambda_s`` is read as the structure's Poisson ratio when
    ``lambda_is_poisson`` is true (the default) and as the second Lame
    constant otherwise.
    """

    rho_f: float = 1.0e3
    nu_f: float = 1.0e-3
    rho_s: float = 1.0e4
    mu_s: float = 0.5e6
    lambda_s: float = 0.4
    lambda_is_poisson: bool = True
    b_f: tuple = (0.0, 0.0)
    b_s: tuple = (0.0, 0.0)
    delta_stab: float = 0.1

    def __post_init__(self):
        if min(self.rho_f, self.nu_f, self.rho_s, self.mu_s) <= 0:
            raise ValueError("densities, viscosity and shear modulus must be positive")
        if self.lambda_is_poisson and not -1.0 < self.lambda_s < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def lame_lambda(self):
        if self.lambda_is_poisson:
            nu = self.lambda_s
            return 2.0 * self.mu_s * nu / (1.0 - 2.0 * nu)
        return self.lambda_s

    @property
    def mu_f(self):
        return self.rho_f * self.nu_f

    def with_(self, **changes):
        return replace(self, **changes)


class DofMap:
    """Global numbering of the four unknown blocks.

    Layout: ``u = (u_x, u_y)`` and ``p`` on fluid vertices, ``d = (d_x, d_y)``
    on structure vertices, ``m = (m_x, m_y)`` on fluid vertices, each vector
    block stored component by component.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.fluid_vertices = mesh.fluid_vertices
        self.structure_vertices = mesh.structure_vertices
        self.n_fluid = self.fluid_vertices.size
        self.n_structure = self.structure_vertices.size
        nv = mesh.n_vertices
        self.fluid_index = np.full(nv, -1, dtype=np.int64)
        self.fluid_index[self.fluid_vertices] = np.arange(self.n_fluid)
        self.structure_index = np.full(nv, -1, dtype=np.int64)
        self.structure_index[self.structure_vertices] = np.arange(self.n_structure)
        nf, ns = self.n_fluid, self.n_structure
        self.sizes = {"u": 2 * nf, "p": nf, "d": 2 * ns, "m": 2 * nf}
        self.offsets = {}
        start = 0
        for name in BLOCKS:
            self.offsets[name] = start
            start += self.sizes[name]
        self.size = start

    def block(self, name):
        o = self.offsets[name]
        return slice(o, o + self.sizes[name])

    def u_dof(self, vertex, comp):
        return comp * self.n_fluid + self.fluid_index[vertex]

    def p_dof(self, vertex):
        return self.offsets["p"] + self.fluid_index[vertex]

    def d_dof(self, vertex, comp):
        return self.offsets["d"] + comp * self.n_structure + self.structure_index[vertex]

    def m_dof(self, vertex, comp):
        return self.offsets["m"] + comp * self.n_fluid + self.fluid_index[vertex]

    def __eq__(self, other):
        return isinstance(other, DofMap) and self.sizes == other.sizes

    def __hash__(self):
        return hash(tuple(self.sizes.values()))


@dataclass
class FieldState:
    """One time level of ``(u_f, p_f, d_s, m_f)`` as a flat vector."""

    time: float
    values: np.ndarray
    sizes: dict = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (sum(self.sizes[b] for b in BLOCKS),):
            raise DimensionMismatch(f"state length {self.values.shape} does not match block sizes {self.sizes}")

    @classmethod
    def zeros(cls, dofmap, time=0.0):
        return cls(time, np.zeros(dofmap.size), dict(dofmap.sizes))

    def _slice(self, name):
        start = 0
        for b in BLOCKS:
            if b == name:
                return slice(start, start + self.sizes[b])
            start += self.sizes[b]
        raise KeyError(name)

    def block(self, name):
        return self.values[self._slice(name)]

    @property
    def u(self):
        return self.block("u")

    @property
    def p(self):
        return self.block("p")

    @property
    def d(self):
        return self.block("d")

    @property
    def m(self):
        return self.block("m")

    def vector_block(self, name):
        """Block ``u``, ``d`` or ``m`` reshaped to ``(n_vertices, 2)``."""
        return self.block(name).reshape(2, -1).T

    def copy(self, time=None):
        return FieldState(self.time if time is None else time, self.values.copy(), dict(self.sizes))


def cell_geometry(coords):
    """Area, barycentric gradients and diameter of triangles.

    Parameters
    ----------
    coords : (n, 3, 2) array

    Returns
    -------
    area : (n,) array
    grads : (n, 3, 2) array
    diameter : (n,) array
    """
    coords = np.asarray(coords, dtype=float)
    x, y = coords[..., 0], coords[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    if np.any(det == 0.0):
        raise DegenerateCell(f"cell {int(np.flatnonzero(det == 0.0)[0])} has zero area")
    grads = np.empty(coords.shape)
    grads[:, 0, 0] = y[:, 1] - y[:, 2]
    grads[:, 1, 0] = y[:, 2] - y[:, 0]
    grads[:, 2, 0] = y[:, 0] - y[:, 1]
    grads[:, 0, 1] = x[:, 2] - x[:, 1]
    grads[:, 1, 1] = x[:, 0] - x[:, 2]
    grads[:, 2, 1] = x[:, 1] - x[:, 0]
    grads /= det[:, None, None]
    edges = coords[:, [1, 2, 0]] - coords
    diameter = np.sqrt((edges ** 2).sum(axis=2)).max(axis=1)
    return 0.5 * det, grads, diameter


def _vector_laplace_pair(area, grads, coeff_diag, coeff_cross, coeff_div):
    """Local (6, 6) block of ``a (grad u : grad v) + b (grad u^T : grad v) + c div u div v``."""
    n = area.shape[0]
    gg = np.einsum("nid,njd->nij", grads, grads)
    out = np.zeros((n, 6, 6))
    for a in range(2):
        for c in range(2):
            blk = np.einsum("ni,nj->nij", grads[:, :, c], grads[:, :, a]) * coeff_cross
            blk = blk + np.einsum("ni,nj->nij", grads[:, :, a], grads[:, :, c]) * coeff_div
            if a == c:
                blk = blk + coeff_diag * gg
            out[:, 3 * a:3 * a + 3, 3 * c:3 * c + 3] = blk * area[:, None, None]
    return out


def element_matrices(coords, params, terms=None, advecting=None, velocity=None):
    """Local P1 matrices of the coupled problem on a batch of triangles.

    Parameters
    ----------
    coords : (n, 3, 2) or (3, 2) array
        Vertex positions of positively oriented cells.
    params : PhysicalParams
    terms : iterable of str, optional
        Subset of ``mass``, ``viscous``, ``convection``, ``convection_newton``,
        ``pressure``, ``divergence``, ``stabilization``, ``elasticity``,
        ``structure_mass``, ``laplacian``. Defaults to every term whose
        inputs are available.
    advecting : (n, 3, 2) array, optional
        Nodal advecting velocity ``w`` for ``convection``.
    velocity : (n, 3, 2) array, optional
        Nodal velocity iterate for ``convection_newton``.

    Returns
    -------
    dict
        Scalar blocks are ``(n, 3, 3)``, vector blocks ``(n, 6, 6)``,
        ``pressure`` is ``(n, 6, 3)`` (velocity test, pressure trial) and
        ``divergence`` is ``(n, 3, 6)``.
    """
    coords = np.asarray(coords, dtype=float)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
        advecting = None if advecting is None else np.asarray(advecting, float)[None]
        velocity = None if velocity is None else np.asarray(velocity, float)[None]
    area, grads, diam = cell_geometry(coords)
    if np.any(area <= 0):
        raise DegenerateCell(f"cell {int(np.flatnonzero(area <= 0)[0])} is not positively oriented")
    if terms is None:
        terms = ["mass", "viscous", "pressure", "divergence", "stabilization", "elasticity",
                 "structure_mass", "laplacian"]
        if advecting is not None:
            terms.append("convection")
        if velocity is not None:
            terms.append("convection_newton")
    mass = area[:, None, None] * _MASS_REF
    out = {}
    for term in terms:
        if term == "mass":
            out[term] = params.rho_f * mass
        elif term == "structure_mass":
            out[term] = params.rho_s * mass
        elif term == "viscous":
            out[term] = _vector_laplace_pair(area, grads, params.mu_f, params.mu_f, 0.0)
        elif term == "elasticity":
            out[term] = _vector_laplace_pair(area, grads, params.mu_s, params.mu_s, params.lame_lambda)
        elif term == "laplacian":
            out[term] = area[:, None, None] * np.einsum("nid,njd->nij", grads, grads)
        elif term == "stabilization":
            tau = params.delta_stab * diam ** 2 / params.mu_f
            out[term] = (tau * area)[:, None, None] * np.einsum("nid,njd->nij", grads, grads)
        elif term == "pressure":
            blk = np.empty((coords.shape[0], 6, 3))
            for a in range(2):
                blk[:, 3 * a:3 * a + 3, :] = -(area / 3.0)[:, None, None] * grads[:, :, a][:, :, None]
            out[term] = blk
        elif term == "divergence":
            blk = np.empty((coords.shape[0], 3, 6))
            for c in range(2):
                blk[:, :, 3 * c:3 * c + 3] = (area / 3.0)[:, None, None] * grads[:, :, c][:, None, :]
            out[term] = blk
        elif term == "convection":
            if advecting is None:
                raise ValueError("convection needs the advecting velocity")
            bg = np.einsum("nkd,njd->nkj", advecting, grads)
            out[term] = params.rho_f * np.einsum("nik,nkj->nij", mass, bg)
        elif term == "convection_newton":
            if velocity is None:
                raise ValueError("convection_newton needs the velocity iterate")
            # grad_u[n, a, c] = d u_a / d x_c, constant per cell
            grad_u = np.einsum("nka,nkc->nac", velocity, grads)
            blk = np.empty((coords.shape[0], 6, 6))
            for a in range(2):
                for c in range(2):
                    blk[:, 3 * a:3 * a + 3, 3 * c:3 * c + 3] = params.rho_f * mass * grad_u[:, a, c][:, None, None]
            out[term] = blk
        else:
            raise ValueError(f"unknown term {term!r}")
    if single:
        out = {k: v[0] for k, v in out.items()}
    return out


def _vector_dofs(index, cells, offset, n):
    """Component-major global dofs ``(n_cells, 6)`` of a vector P1 field."""
    loc = index[cells]
    return np.concatenate([offset + loc, offset + n + loc], axis=1)


def assemble(mesh, dofmap, terms, params, positions=None, advecting=None, velocity=None):
    """Assemble selected bilinear forms into one matrix of size ``dofmap.size``.

    Fluid terms act on the ``u``/``p`` blocks over fluid cells (at
    ``positions`` if given, else the reference vertices); ``elasticity`` and
    ``structure_mass`` act on ``d`` over structure cells; ``laplacian`` acts
    on both components of ``m`` over the reference fluid cells.

    ``advecting`` and ``velocity`` are per-vertex ``(n_vertices, 2)`` arrays.
    """
    terms = list(terms)
    n = dofmap.size
    rows, cols, vals = [], [], []
    xcur = mesh.vertices if positions is None else np.asarray(positions, float)
    fc = mesh.cells[mesh.fluid_cells]
    sc = mesh.cells[mesh.structure_cells]
    nf, ns = dofmap.n_fluid, dofmap.n_structure
    u_dofs = _vector_dofs(dofmap.fluid_index, fc, dofmap.offsets["u"], nf)
    p_dofs = dofmap.offsets["p"] + dofmap.fluid_index[fc]
    d_dofs = _vector_dofs(dofmap.structure_index, sc, dofmap.offsets["d"], ns)
    m_dofs = _vector_dofs(dofmap.fluid_index, fc, dofmap.offsets["m"], nf)

    def add(blocks, r, c):
        rows.append(np.broadcast_to(r[:, :, None], blocks.shape).ravel())
        cols.append(np.broadcast_to(c[:, None, :], blocks.shape).ravel())
        vals.append(blocks.ravel())

    fluid_terms = [t for t in terms if t in ("mass", "viscous", "convection", "convection_newton",
                                             "pressure", "divergence", "stabilization")]
    if fluid_terms and fc.size:
        loc = element_matrices(
            xcur[fc], params, fluid_terms,
            advecting=None if advecting is None else np.asarray(advecting)[fc],
            velocity=None if velocity is None else np.asarray(velocity)[fc])
        for t in fluid_terms:
            blk = loc[t]
            if t in ("mass", "convection"):
                blk6 = np.zeros((blk.shape[0], 6, 6))
                blk6[:, :3, :3] = blk
                blk6[:, 3:, 3:] = blk
                add(blk6, u_dofs, u_dofs)
            elif t in ("viscous", "convection_newton"):
                add(blk, u_dofs, u_dofs)
            elif t == "pressure":
                add(blk, u_dofs, p_dofs)
            elif t == "divergence":
                add(blk, p_dofs, u_dofs)
            elif t == "stabilization":
                add(blk, p_dofs, p_dofs)
    struct_terms = [t for t in terms if t in ("elasticity", "structure_mass")]
    if struct_terms and sc.size:
        loc = element_matrices(mesh.vertices[sc], params, struct_terms)
        for t in struct_terms:
            blk = loc[t]
            if t == "structure_mass":
                blk6 = np.zeros((blk.shape[0], 6, 6))
                blk6[:, :3, :3] = blk
                blk6[:, 3:, 3:] = blk
                blk = blk6
            add(blk, d_dofs, d_dofs)
    if "laplacian" in terms and fc.size:
        lap = element_matrices(mesh.vertices[fc], params, ["laplacian"])["laplacian"]
        blk6 = np.zeros((lap.shape[0], 6, 6))
        blk6[:, :3, :3] = lap
        blk6[:, 3:, 3:] = lap
        add(blk6, m_dofs, m_dofs)
    unknown = set(terms) - set(fluid_terms) - set(struct_terms) - {"laplacian"}
    if unknown:
        raise ValueError(f"unknown terms {sorted(unknown)}")
    if not rows:
        return sp.csr_matrix((n, n))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return A.tocsr()


def assemble_load(mesh, dofmap, params, positions=None):
    """Body-force load vector ``(b_f, psi_f) + (b_s, psi_s)``."""
    b = np.zeros(dofmap.size)
    xcur = mesh.vertices if positions is None else np.asarray(positions, float)
    for cells_idx, force, index, name, count in (
            (mesh.fluid_cells, params.b_f, dofmap.fluid_index, "u", dofmap.n_fluid),
            (mesh.structure_cells, params.b_s, dofmap.structure_index, "d", dofmap.n_structure)):
        cells = mesh.cells[cells_idx]
        if not cells.size or not np.any(force):
            continue
        xs = (xcur if name == "u" else mesh.vertices)[cells]
        area = cell_geometry(xs)[0]
        for c in range(2):
            rows = dofmap.offsets[name] + c * count + index[cells]
            b += np.bincount(rows.ravel(), weights=np.repeat(area / 3.0 * force[c], 3), minlength=dofmap.size)
    return b


def apply_dirichlet(A, b, constrained, values):
    """Row replacement: constrained rows become identity rows with rhs ``values``.

    Columns are left untouched, so the result is in general nonsymmetric.
    """
    A = sp.csr_matrix(A, dtype=float, copy=True)
    b = np.array(b, dtype=float, copy=True)
    constrained = np.asarray(constrained, dtype=np.int64)
    keep = np.ones(A.shape[0])
    keep[constrained] = 0.0
    A = sp.diags(keep) @ A
    diag = np.zeros(A.shape[0])
    diag[constrained] = 1.0
    A = (A + sp.diags(diag)).tocsr()
    A.eliminate_zeros()
    b[constrained] = values
    return A, b


def scalar_mass_matrix(vertices, cells, n_vertices=None):
    """Unweighted P1 mass matrix over ``cells`` indexed by global vertex."""
    n = vertices.shape[0] if n_vertices is None else n_vertices
    area = cell_geometry(vertices[cells])[0]
    loc = area[:, None, None] * _MASS_REF
    r = np.repeat(cells, 3, axis=1).ravel()
    c = np.tile(cells, (1, 3)).ravel()
    return sp.coo_matrix((loc.ravel(), (r, c)), shape=(n, n)).tocsr()


def l2_inner(f, g, vertices, cells):
    """Exact L2 inner product of P1 fields given per vertex.

    ``f`` and ``g`` are ``(n_vertices,)`` or ``(n_vertices, k)`` arrays indexed
    like ``vertices``; vector components are summed.
    """
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    area = cell_geometry(vertices[cells])[0]
    fl = f[cells]
    gl = g[cells]
    if fl.ndim == 2:
        fl, gl = fl[..., None], gl[..., None]
    return float(np.einsum("n,ij,nik,njk->", area, _MASS_REF, fl, gl))


def l2_norm(f, vertices, cells):
    return float(np.sqrt(max(l2_inner(f, f, vertices, cells), 0.0)))


def fluid_cells_local(mesh, dofmap):
    """Fluid cells renumbered to fluid-local vertex indices."""
    return dofmap.fluid_index[mesh.cells[mesh.cell_region == Region.FLUID]]


def structure_cells_local(mesh, dofmap):
    return dofmap.structure_index[mesh.cells[mesh.cell_region == Region.STRUCTURE]]
