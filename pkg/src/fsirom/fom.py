"""Monolithic ALE finite-element time stepper for the coupled problem.

Per time step the solver runs a fixed-point loop on the fluid mesh: the
current interface displacement is extended into the fluid domain, the fluid
mesh is moved, and the nonlinear system for ``(u_f, p_f, d_s)`` is solved by
Newton's method on that mesh. The loop ends when the interface displacement
stops changing.

Coupling follows from the shared test space: fluid momentum rows of interface
vertices are added to the structure rows of the same vertex, and the fluid
velocity row there is replaced by the kinematic constraint
``u = (d - d_prev) / dt``.
"""

import logging
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .ale import HarmonicExtension
from .errors import (DegenerateCell, MeshFixedPointDiverged, NewtonDiverged, StepFailure,
                     TangledMesh)
from .fem import DofMap, FieldState, PhysicalParams, element_matrices, cell_geometry, _MASS_REF
from .mesh import BenchmarkGeometry, Tag
from .numerics import SparseLU
from .trajectory import Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FomConfig:
    dt: float = 0.01
    t_end: float = 15.0
    params: PhysicalParams = field(default_factory=PhysicalParams)
    u_hat_max: float = 1.5
    ramp_end: float = 2.0
    channel_height: float = 0.41
    newton_tol: float = 1e-8
    newton_max: int = 20
    meshfp_tol: float = 1e-8
    meshfp_max: int = 15
    snapshot_every: int = 1
    ale_stiffening: float = 1.0
    # "traction_free": sigma n = 0; "gradient": (nu grad u - p I) n = 0
    outlet: str = "traction_free"
    # False keeps marching through Newton stagnation and inverted cells
    strict: bool = True

    def __post_init__(self):
        if self.dt <= 0 or self.t_end < 0:
            raise ValueError("dt must be positive and t_end nonnegative")
        if min(self.newton_tol, self.meshfp_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.outlet not in ("traction_free", "gradient"):
            raise ValueError(f"unknown outlet condition {self.outlet!r}")

    def with_(self, **changes):
        return replace(self, **changes)

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


def inflow_profile(y, t, u_hat_max, ramp_end=2.0, height=0.41):
    """Horizontal inflow velocity: parabola with peak ``u_hat_max``, cosine ramp."""
    y = np.asarray(y, dtype=float)
    u = u_hat_max * 4.0 / height ** 2 * y * (height - y)
    if t < ramp_end:
        u = u * 0.5 * (1.0 - np.cos(np.pi * t / ramp_end))
    return u


def backward_diff1(phi_n, phi_nm1, dt):
    return (np.asarray(phi_n) - np.asarray(phi_nm1)) / dt


def backward_diff2(phi_n, phi_nm1, phi_nm2, dt):
    return (np.asarray(phi_n) - 2.0 * np.asarray(phi_nm1) + np.asarray(phi_nm2)) / dt ** 2


@dataclass
class TimeHistory:
    """States at levels ``n-1`` and ``n-2``; at the first step both coincide."""

    prev: FieldState
    prev2: FieldState

    @classmethod
    def start(cls, state):
        return cls(state, state)

    def advance(self, new_state):
        return TimeHistory(new_state, self.prev)


class _Pattern:
    """Fixed CSR sparsity pattern filled by ``bincount`` over entry lists."""

    def __init__(self, rows, cols, n):
        keys = rows.astype(np.int64) * n + cols
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        self.n = n
        self.nnz = uniq.size
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // n, minlength=n))]).astype(np.int32)

    def matrix(self, values):
        data = np.bincount(self.inverse, weights=values, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


@dataclass
class Linearization:
    """Jacobian, residual and known-data vector at one Newton iterate."""

    jacobian: sp.csr_matrix
    residual: np.ndarray
    rhs: np.ndarray


class FsiOperator:
    """Assembles the coupled nonlinear system on a moving fluid mesh.

    The Newton unknown ``X`` is the ``(u, p, d)`` prefix of a
    :class:`FieldState` vector.
    """

    def __init__(self, mesh, config, dofmap=None, geometry=None):
        self.mesh = mesh
        self.config = config
        self.geometry = geometry or BenchmarkGeometry()
        dm = self.dofmap = dofmap or DofMap(mesh)
        nf, ns = dm.n_fluid, dm.n_structure
        self.n = 3 * nf + 2 * ns
        off_d = 3 * nf
        self.extension = HarmonicExtension(mesh, dm, config.ale_stiffening)
        self.ref_fluid = mesh.vertices[dm.fluid_vertices]

        tagged = {t: mesh.tagged_vertices(t) for t in Tag}
        fluid_set = dm.fluid_index >= 0
        struct_set = dm.structure_index >= 0
        wall_like = np.zeros(mesh.n_vertices, bool)
        wall_like[tagged[Tag.WALLS]] = True
        inlet = np.zeros(mesh.n_vertices, bool)
        inlet[tagged[Tag.INLET]] = True
        iface = np.zeros(mesh.n_vertices, bool)
        iface[tagged[Tag.INTERFACE]] = True
        self.wall_vertices = np.flatnonzero(fluid_set & wall_like & ~inlet)
        self.inlet_vertices = np.flatnonzero(fluid_set & inlet)
        self.kinematic_vertices = np.flatnonzero(fluid_set & iface & ~wall_like & ~inlet)
        self.fixed_vertices = np.flatnonzero(struct_set & wall_like)
        self.interface_vertices = tagged[Tag.INTERFACE]

        fi, si = dm.fluid_index, dm.structure_index
        self.inlet_u = np.concatenate([fi[self.inlet_vertices], nf + fi[self.inlet_vertices]])
        self.inlet_y = mesh.vertices[self.inlet_vertices, 1]
        self.wall_u = np.concatenate([fi[self.wall_vertices], nf + fi[self.wall_vertices]])
        self.kin_u = np.concatenate([fi[self.kinematic_vertices], nf + fi[self.kinematic_vertices]])
        self.kin_d = np.concatenate([off_d + si[self.kinematic_vertices], off_d + ns + si[self.kinematic_vertices]])
        self.fixed_d = np.concatenate([off_d + si[self.fixed_vertices], off_d + ns + si[self.fixed_vertices]])
        self.dirichlet_rows = np.concatenate([self.inlet_u, self.wall_u, self.fixed_d])
        self.constrained_rows = np.concatenate([self.dirichlet_rows, self.kin_u])

        # Test-row redirection: Dirichlet rows dropped, interface momentum rows
        # moved onto the structure rows of the same vertex.
        row_map = np.arange(self.n)
        row_map[self.inlet_u] = -1
        row_map[self.wall_u] = -1
        row_map[self.fixed_d] = -1
        row_map[self.kin_u] = self.kin_d
        self.row_map = row_map

        self.fluid_cells = mesh.cells[mesh.fluid_cells]
        self.fluid_local = fi[self.fluid_cells]
        fl = self.fluid_local
        self.fluid_dofs = np.concatenate([fl, nf + fl, 2 * nf + fl], axis=1)
        sc = mesh.cells[mesh.structure_cells]
        self.structure_local = si[sc]
        sl = self.structure_local
        self.structure_dofs = np.concatenate([off_d + sl, off_d + ns + sl], axis=1)

        frows = row_map[self.fluid_dofs]
        fr = np.broadcast_to(frows[:, :, None], (fl.shape[0], 9, 9))
        fc = np.broadcast_to(self.fluid_dofs[:, None, :], (fl.shape[0], 9, 9))
        self._fluid_sel = np.flatnonzero(fr.ravel() >= 0)
        srows = row_map[self.structure_dofs]
        sr = np.broadcast_to(srows[:, :, None], (sl.shape[0], 6, 6))
        scol = np.broadcast_to(self.structure_dofs[:, None, :], (sl.shape[0], 6, 6))
        self._struct_sel = np.flatnonzero(sr.ravel() >= 0)
        self._fluid_rows = frows
        self._struct_rows = srows

        crow = np.concatenate([self.dirichlet_rows, self.kin_u, self.kin_u])
        ccol = np.concatenate([self.dirichlet_rows, self.kin_u, self.kin_d])
        self._constraint_vals = np.concatenate([np.ones(self.dirichlet_rows.size + self.kin_u.size),
                                                np.full(self.kin_u.size, -1.0 / config.dt)])
        rows = [fr.ravel()[self._fluid_sel], sr.ravel()[self._struct_sel], crow]
        cols = [fc.ravel()[self._fluid_sel], scol.ravel()[self._struct_sel], ccol]

        self._outlet = None
        if config.outlet == "gradient":
            self._setup_outlet()
            orow = self._outlet["rows"]
            ocol = self._outlet["cols"]
            self._outlet_sel = np.flatnonzero(orow.ravel() >= 0)
            rows.append(orow.ravel()[self._outlet_sel])
            cols.append(ocol.ravel()[self._outlet_sel])
        self.pattern = _Pattern(np.concatenate(rows), np.concatenate(cols), self.n)

        p = config.params
        dt = config.dt
        loc = element_matrices(mesh.vertices[sc], p, ["structure_mass", "elasticity"]) if sc.size else None
        self._struct_mass6 = np.zeros((sl.shape[0], 6, 6))
        if loc is not None:
            self._struct_mass6[:, :3, :3] = loc["structure_mass"]
            self._struct_mass6[:, 3:, 3:] = loc["structure_mass"]
            self._struct_K = self._struct_mass6 / dt ** 2 + loc["elasticity"]
            area_s = cell_geometry(mesh.vertices[sc])[0]
            self._struct_body = np.concatenate([np.repeat((area_s / 3.0 * p.b_s[0])[:, None], 3, axis=1),
                                                np.repeat((area_s / 3.0 * p.b_s[1])[:, None], 3, axis=1)], axis=1)
        else:
            self._struct_K = np.zeros((0, 6, 6))
            self._struct_body = np.zeros((0, 6))
        self.point_a_vertex = mesh.find_vertex(self.geometry.point_a)

    def _setup_outlet(self):
        mesh = self.mesh
        edges = mesh.boundary_edges[mesh.edge_tags == Tag.OUTLET]
        cells = self.fluid_cells
        owner, which = [], []
        lookup = {}
        for c, tri in enumerate(cells):
            for k in range(3):
                a, b = tri[k], tri[(k + 1) % 3]
                lookup[(min(a, b), max(a, b))] = c
        for a, b in edges:
            owner.append(lookup[(min(a, b), max(a, b))])
            which.append((a, b))
        owner = np.asarray(owner, dtype=np.int64)
        which = np.asarray(which, dtype=np.int64).reshape(-1, 2)
        nf = self.dofmap.n_fluid
        fi = self.dofmap.fluid_index
        ev = fi[which]
        trial = self.fluid_dofs[owner][:, :6]
        test = np.concatenate([ev, nf + ev], axis=1)
        rows = self.row_map[test]
        self._outlet = {
            "owner": owner, "edge_local": ev,
            "rows": np.broadcast_to(rows[:, :, None], (owner.size, 4, 6)),
            "cols": np.broadcast_to(trial[:, None, :], (owner.size, 4, 6)),
        }

    def _outlet_values(self, positions):
        """Local ``(n_edges, 4, 6)`` blocks of ``-mu (grad u^T n, v)`` on outlet edges."""
        o = self._outlet
        coords = positions[self.fluid_local[o["owner"]]]
        _, grads, _ = cell_geometry(coords)
        pa = positions[o["edge_local"][:, 0]]
        pb = positions[o["edge_local"][:, 1]]
        t = pb - pa
        length = np.hypot(t[:, 0], t[:, 1])
        normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
        centroid = coords.mean(axis=1)
        flip = np.einsum("ij,ij->i", normal, 0.5 * (pa + pb) - centroid) < 0
        normal[flip] *= -1.0
        mu = self.config.params.mu_f
        blk = np.zeros((o["owner"].size, 4, 6))
        for a in range(2):
            for c in range(2):
                vals = -mu * 0.5 * length[:, None] * grads[:, :, a] * normal[:, c][:, None]
                blk[:, 2 * a, 3 * c:3 * c + 3] = vals
                blk[:, 2 * a + 1, 3 * c:3 * c + 3] = vals
        return blk

    def interface_displacement(self, X):
        """Structure displacement as ``(n_structure_vertices, 2)``."""
        nf, ns = self.dofmap.n_fluid, self.dofmap.n_structure
        return X[3 * nf:3 * nf + 2 * ns].reshape(2, ns).T

    def boundary_values(self, t):
        return inflow_profile(self.inlet_y, t, self.config.u_hat_max, self.config.ramp_end,
                              self.config.channel_height)

    def linearize(self, X, positions, w, u_prev, d_prev, d_prev2, t):
        """Jacobian and residual of the step-``n`` system at iterate ``X``.

        Parameters
        ----------
        positions : (n_fluid, 2) current fluid vertex positions
        w : (n_fluid, 2) mesh velocity
        u_prev : (n_fluid, 2) fluid velocity at ``n-1`` (nodal identification)
        d_prev, d_prev2 : (2 n_structure,) structure displacement at ``n-1``, ``n-2``
        """
        cfg = self.config
        p = cfg.params
        dt = cfg.dt
        dm = self.dofmap
        nf = dm.n_fluid
        u = X[:2 * nf].reshape(2, nf).T
        coords = positions[self.fluid_local]
        area = cell_geometry(coords)[0]
        if cfg.strict and area.min(initial=np.inf) <= 0:
            raise TangledMesh(f"fluid cell {int(np.argmin(area))} inverted")
        u_loc = u[self.fluid_local]
        beta = u_loc - w[self.fluid_local]
        terms = ["viscous", "pressure", "divergence", "stabilization", "convection", "convection_newton"]
        try:
            loc = element_matrices(coords, p, terms, advecting=beta, velocity=u_loc)
        except DegenerateCell:
            if cfg.strict:
                raise
            loc = _signed_element_matrices(coords, p, terms, beta, u_loc)
        mass = p.rho_f * np.abs(area)[:, None, None] * _MASS_REF
        scalar = mass / dt + loc["convection"]
        A = np.zeros((coords.shape[0], 9, 9))
        A[:, :6, :6] = loc["viscous"]
        A[:, :3, :3] += scalar
        A[:, 3:6, 3:6] += scalar
        A[:, :6, 6:] = loc["pressure"]
        A[:, 6:, :6] = loc["divergence"]
        A[:, 6:, 6:] = loc["stabilization"]
        Jf = A.copy()
        Jf[:, :6, :6] += loc["convection_newton"]

        up = u_prev[self.fluid_local]
        bf = np.zeros((coords.shape[0], 9))
        bf[:, :3] = np.einsum("nij,nj->ni", mass, up[:, :, 0]) / dt
        bf[:, 3:6] = np.einsum("nij,nj->ni", mass, up[:, :, 1]) / dt
        if np.any(p.b_f):
            bf[:, :3] += (np.abs(area) / 3.0 * p.b_f[0])[:, None]
            bf[:, 3:6] += (np.abs(area) / 3.0 * p.b_f[1])[:, None]

        sd_hist = (2.0 * d_prev - d_prev2)[self.structure_dofs - 3 * nf]
        bs = np.einsum("nij,nj->ni", self._struct_mass6, sd_hist) / dt ** 2 + self._struct_body

        a_vals = [A.ravel()[self._fluid_sel], self._struct_K.ravel()[self._struct_sel], self._constraint_vals]
        j_vals = [Jf.ravel()[self._fluid_sel], a_vals[1], a_vals[2]]
        if self._outlet is not None:
            ov = self._outlet_values(positions).ravel()[self._outlet_sel]
            a_vals.append(ov)
            j_vals.append(ov)
        A_mat = self.pattern.matrix(np.concatenate(a_vals))
        J_mat = self.pattern.matrix(np.concatenate(j_vals))

        b = np.zeros(self.n)
        fr = self._fluid_rows.ravel()
        ok = fr >= 0
        b += np.bincount(fr[ok], weights=bf.ravel()[ok], minlength=self.n)
        sr = self._struct_rows.ravel()
        ok = sr >= 0
        b += np.bincount(sr[ok], weights=bs.ravel()[ok], minlength=self.n)
        b[self.inlet_u] = np.concatenate([self.boundary_values(t), np.zeros(self.inlet_vertices.size)])
        b[self.wall_u] = 0.0
        b[self.fixed_d] = 0.0
        b[self.kin_u] = -d_prev[self.kin_d - 3 * nf] / dt
        R = A_mat @ X - b
        return Linearization(J_mat, R, b)

    def impose_constraints(self, X, rhs):
        """Overwrite constrained entries of ``X`` with their eliminated values.

        Interface velocities are rebuilt from the structure displacement, so
        the kinematic condition holds to rounding rather than to the LU
        backward error.
        """
        X[self.dirichlet_rows] = rhs[self.dirichlet_rows]
        X[self.kin_u] = X[self.kin_d] / self.config.dt + rhs[self.kin_u]
        return X

    def divergence_norm(self, X, positions):
        nf = self.dofmap.n_fluid
        u = X[:2 * nf].reshape(2, nf).T
        area, grads, _ = cell_geometry(positions[self.fluid_local])
        div = np.einsum("nkd,nkd->n", u[self.fluid_local], grads)
        return float(np.sqrt(np.sum(np.abs(area) * div ** 2)))


def _signed_element_matrices(coords, params, terms, beta, u_loc):
    """Element matrices of inverted cells, integrated with ``|det|`` as usual."""
    flipped = coords.copy()
    area = cell_geometry(coords)[0]
    neg = area < 0
    flipped[neg] = coords[neg][:, [0, 2, 1]]
    b = beta.copy()
    b[neg] = beta[neg][:, [0, 2, 1]]
    v = u_loc.copy()
    v[neg] = u_loc[neg][:, [0, 2, 1]]
    loc = element_matrices(flipped, params, terms, advecting=b, velocity=v)
    perm3 = np.array([0, 2, 1])
    perm6 = np.concatenate([perm3, 3 + perm3])
    for k, blk in loc.items():
        r = perm6 if blk.shape[1] == 6 else perm3
        c = perm6 if blk.shape[2] == 6 else perm3
        blk[neg] = blk[neg][:, r][:, :, c]
    return loc


class FomCorrector:
    """Newton corrections by sparse LU of the full Jacobian."""

    def __init__(self, config, operator=None):
        self.config = config
        self.operator = operator
        self.solve_time = 0.0
        self.n_solves = 0

    def start(self, X):
        return X.copy()

    def converged(self, lin):
        rn = np.linalg.norm(lin.residual)
        return rn <= self.config.newton_tol * (1.0 + np.linalg.norm(lin.rhs)), rn

    def correct(self, X, lin):
        t0 = _time.perf_counter()
        delta = SparseLU(lin.jacobian).solve(-lin.residual)
        self.solve_time += _time.perf_counter() - t0
        self.n_solves += 1
        return X + delta

    def finish(self, X, lin):
        if self.operator is None:
            return X
        return self.operator.impose_constraints(X, lin.rhs)


@dataclass
class StepInfo:
    newton_iterations: int = 0
    fixed_point_iterations: int = 0
    residual: float = 0.0
    divergence: float = 0.0
    converged: bool = True
    tangled: bool = False


class FsiSolver:
    """Time stepper for the coupled problem on one mesh."""

    def __init__(self, mesh, config, geometry=None):
        self.mesh = mesh
        self.config = config
        self.op = FsiOperator(mesh, config, geometry=geometry)
        self.dofmap = self.op.dofmap

    def initial_state(self, time=0.0):
        return FieldState.zeros(self.dofmap, time)

    def point_a_dy(self, state):
        v = self.op.point_a_vertex
        if v is None or self.dofmap.structure_index[v] < 0:
            return float("nan")
        return float(state.d[self.dofmap.n_structure + self.dofmap.structure_index[v]])

    def positions(self, m):
        return self.op.ref_fluid + m

    def step(self, history, t, corrector=None):
        """Advance to time ``t``; returns ``(FieldState, StepInfo)``."""
        cfg = self.config
        op = self.op
        dm = self.dofmap
        n = op.n
        corrector = corrector or FomCorrector(cfg, op)
        prev, prev2 = history.prev, history.prev2
        u_prev = prev.vector_block("u")
        m_prev = prev.vector_block("m")
        d_prev = prev.d
        d_prev2 = prev2.d
        X = corrector.start(prev.values[:n])
        info = StepInfo()
        d_guess = op.interface_displacement(X)[self.op.extension.interface_structure]
        m = m_prev
        for fp in range(cfg.meshfp_max):
            info.fixed_point_iterations = fp + 1
            m = self.op.extension.solve_interface(d_guess)
            pos = self.positions(m)
            area = cell_geometry(pos[op.fluid_local])[0]
            if area.min(initial=np.inf) <= 0:
                info.tangled = True
                if cfg.strict:
                    raise TangledMesh(f"fluid mesh tangles at t={t:.6g}s")
            w = (m - m_prev) / cfg.dt
            for it in range(cfg.newton_max + 1):
                lin = op.linearize(X, pos, w, u_prev, d_prev, d_prev2, t)
                if not np.all(np.isfinite(lin.residual)):
                    raise NewtonDiverged(f"non-finite residual at t={t:.6g}s")
                ok, info.residual = corrector.converged(lin)
                if ok:
                    break
                if it == cfg.newton_max:
                    info.converged = False
                    if cfg.strict:
                        raise NewtonDiverged(
                            f"residual {info.residual:.3e} above tolerance after {it} iterations at t={t:.6g}s")
                    break
                X = corrector.correct(X, lin)
                info.newton_iterations += 1
            X = corrector.finish(X, lin)
            d_new = op.interface_displacement(X)[self.op.extension.interface_structure]
            increment = np.abs(d_new - d_guess).max(initial=0.0)
            d_guess = d_new
            if increment <= cfg.meshfp_tol:
                break
        else:
            info.converged = False
            if cfg.strict:
                raise MeshFixedPointDiverged(f"mesh fixed point did not converge at t={t:.6g}s")
        info.divergence = op.divergence_norm(X, self.positions(m))
        values = np.concatenate([X, m.T.ravel()])
        return FieldState(t, values, dict(dm.sizes)), info

    def run(self, initial=None, t_start=0.0, t_end=None, callback=None, history=None):
        """March from ``t_start`` to ``t_end`` and return a :class:`Trajectory`.

        States are stored every ``snapshot_every`` steps (and at both ends);
        the point-A vertical displacement is recorded at every step.
        """
        cfg = self.config
        t_end = cfg.t_end if t_end is None else t_end
        if history is None:
            state0 = initial if initial is not None else self.initial_state(t_start)
            history = TimeHistory.start(state0)
        state = history.prev
        n0 = int(round(t_start / cfg.dt))
        n1 = int(round(t_end / cfg.dt))
        traj = Trajectory(cfg.dt, dict(self.dofmap.sizes))
        traj.append_state(state)
        traj.append_point(state.time, self.point_a_dy(state))
        corrector = FomCorrector(cfg, self.op)
        for k, n in enumerate(range(n0 + 1, n1 + 1), start=1):
            t = n * cfg.dt
            before = corrector.solve_time
            try:
                state, info = self.step(history, t, corrector)
            except Exception as exc:
                raise StepFailure(n, t, exc) from exc
            history = history.advance(state)
            if k % cfg.snapshot_every == 0 or n == n1:
                traj.append_state(state)
            traj.append_point(t, self.point_a_dy(state))
            traj.stats.append({"t": t, "newton": info.newton_iterations, "fixed_point": info.fixed_point_iterations,
                               "residual": info.residual, "divergence": info.divergence,
                               "solve_time": corrector.solve_time - before})
            if callback is not None:
                callback(n, state, info)
        traj.linear_solve_time = corrector.solve_time
        traj.linear_solves = corrector.n_solves
        self.last_history = history
        return traj
