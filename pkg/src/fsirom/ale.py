"""Harmonic extension of the structure displacement into the fluid mesh."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import DofMap, cell_geometry, fluid_cells_local
from .mesh import Tag
from .numerics import SparseLU


class HarmonicExtension:
    """Componentwise discrete Laplace solve on the reference fluid mesh.

    The mesh displacement equals the structure displacement on interface
    vertices and vanishes on every other fluid boundary vertex. With
    ``stiffening > 0`` each reference cell's contribution is weighted by
    ``(max_area / area) ** stiffening`` so small cells near the beam corners
    deform less; ``stiffening=0`` is the plain Laplacian. The stiffness
    matrix is factorized once at construction; :meth:`solve` only does
    triangular solves, so one instance serves every time step and segment.
    """

    def __init__(self, mesh, dofmap=None, stiffening=1.0):
        self.mesh = mesh
        self.stiffening = float(stiffening)
        self.dofmap = dofmap or DofMap(mesh)
        dm = self.dofmap
        cells = fluid_cells_local(mesh, dm)
        area, grads, _ = cell_geometry(mesh.vertices[mesh.cells[mesh.fluid_cells]])
        weight = (area.max() / area) ** self.stiffening if area.size else area
        loc = (weight * area)[:, None, None] * np.einsum("nid,njd->nij", grads, grads)
        n = dm.n_fluid
        K = sp.coo_matrix((loc.ravel(), (np.repeat(cells, 3, axis=1).ravel(), np.tile(cells, (1, 3)).ravel())),
                          shape=(n, n)).tocsr()
        boundary = np.unique(dm.fluid_index[mesh.boundary_edges.ravel()])
        self.boundary = boundary[boundary >= 0]
        iface_vertices = mesh.tagged_vertices(Tag.INTERFACE)
        self.interface_vertices = iface_vertices
        self.interface_fluid = dm.fluid_index[iface_vertices]
        self.interface_structure = dm.structure_index[iface_vertices]
        keep = np.ones(n)
        keep[self.boundary] = 0.0
        diag = 1.0 - keep
        self.matrix = (sp.diags(keep) @ K + sp.diags(diag)).tocsr()
        self._lu = SparseLU(self.matrix)

    def solve_interface(self, interface_values):
        """Extension of displacement values given on ``interface_vertices``."""
        g = np.asarray(interface_values, dtype=float).reshape(-1, 2)
        if g.shape[0] != self.interface_vertices.size:
            raise ValueError("one displacement per interface vertex required")
        rhs = np.zeros((self.dofmap.n_fluid, 2))
        rhs[self.interface_fluid] = g
        return self._lu.solve(rhs)

    def solve(self, structure_displacement):
        """Extension of a structure displacement ``(n_structure_vertices, 2)``."""
        d = np.asarray(structure_displacement, dtype=float).reshape(-1, 2)
        return self.solve_interface(d[self.interface_structure])


def solve_harmonic_extension(mesh, interface_values, dofmap=None, stiffening=0.0):
    """One-shot extension of interface data; see :class:`HarmonicExtension`."""
    return HarmonicExtension(mesh, dofmap, stiffening).solve_interface(interface_values)


@dataclass(frozen=True)
class MeshMotionState:
    m_current: np.ndarray
    m_previous: np.ndarray
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.shape(self.m_current) != np.shape(self.m_previous):
            raise ValueError("mesh displacements must share a shape")


def mesh_velocity(state):
    """Nodal mesh velocity ``(m_current - m_previous) / dt``."""
    return (np.asarray(state.m_current, float) - np.asarray(state.m_previous, float)) / state.dt


def deformation_jacobian(ref_mesh, displaced_mesh, cells=None):
    """Per-cell deformation gradient ``F`` ``(n, 2, 2)`` and ``det F``."""
    idx = ref_mesh.cells if cells is None else ref_mesh.cells[cells]
    X = ref_mesh.vertices[idx]
    x = displaced_mesh.vertices[idx]
    dX = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)
    dx = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
    F = dx @ np.linalg.inv(dX)
    return F, np.linalg.det(F)
