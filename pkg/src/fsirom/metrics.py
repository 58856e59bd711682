"""Error indicators between a full-order and a reduced trajectory.

Fluid blocks are integrated over the full-order model's moved fluid mesh at
each time; the structure displacement is integrated over the reference
structure. The mesh displacement block is excluded from the totals because
both models compute it at full order.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroNorm
from .fem import DofMap, l2_inner

VARIABLES = ("u", "p", "d")


class NormEvaluator:
    """Squared L2 norms of state blocks on one mesh."""

    def __init__(self, mesh, dofmap=None):
        self.mesh = mesh
        self.dofmap = dofmap or DofMap(mesh)
        dm = self.dofmap
        self.fluid_cells = dm.fluid_index[mesh.cells[mesh.fluid_cells]]
        self.structure_cells = dm.structure_index[mesh.cells[mesh.structure_cells]]
        self.ref_fluid = mesh.vertices[dm.fluid_vertices]
        self.ref_structure = mesh.vertices[dm.structure_vertices]

    def squared(self, values, sizes, fluid_positions):
        """Per-variable squared norms of a stacked ``(u, p, d, m)`` vector."""
        nf, ns = self.dofmap.n_fluid, self.dofmap.n_structure
        if sizes["u"] != 2 * nf or sizes["d"] != 2 * ns:
            raise DimensionMismatch("state does not match the mesh")
        u = values[:2 * nf].reshape(2, nf).T
        p = values[2 * nf:3 * nf]
        d = values[3 * nf:3 * nf + 2 * ns].reshape(2, ns).T
        return {
            "u": l2_inner(u, u, fluid_positions, self.fluid_cells),
            "p": l2_inner(p, p, fluid_positions, self.fluid_cells),
            "d": l2_inner(d, d, self.ref_structure, self.structure_cells) if ns else 0.0,
        }

    def fom_positions(self, values, sizes):
        nf = self.dofmap.n_fluid
        m = values[-sizes["m"]:].reshape(2, nf).T
        return self.ref_fluid + m


def _check_pair(a, b):
    if a.values.shape != b.values.shape or a.sizes != b.sizes:
        raise DimensionMismatch("states have different layouts")


def relative_spatial_l2(fom_state, rom_state, evaluator):
    """Relative L2 error of ``rom_state`` against ``fom_state``.

    Returns
    -------
    total : float
    per_variable : dict
        Relative errors of ``u``, ``p`` and ``d``; ``nan`` where the
        reference block vanishes.

    Raises
    ------
    ZeroNorm
        If the whole reference state has zero norm.
    """
    _check_pair(fom_state, rom_state)
    pos = evaluator.fom_positions(fom_state.values, fom_state.sizes)
    ref = evaluator.squared(fom_state.values, fom_state.sizes, pos)
    err = evaluator.squared(fom_state.values - rom_state.values, fom_state.sizes, pos)
    den = sum(ref.values())
    if den <= 0:
        raise ZeroNorm(f"reference state at t={fom_state.time:.6g} has zero norm")
    per = {v: (np.sqrt(err[v] / ref[v]) if ref[v] > 0 else float("nan")) for v in VARIABLES}
    return float(np.sqrt(sum(err.values()) / den)), per


def relative_spacetime_l2(fom_states, rom_states, evaluator, dt):
    """``(sum dt |e_n|^2)^(1/2) / (sum dt |U_n|^2)^(1/2)`` over aligned steps."""
    if len(fom_states) != len(rom_states):
        raise DimensionMismatch("trajectories have different lengths")
    num = den = 0.0
    for a, b in zip(fom_states, rom_states):
        _check_pair(a, b)
        pos = evaluator.fom_positions(a.values, a.sizes)
        den += dt * sum(evaluator.squared(a.values, a.sizes, pos).values())
        num += dt * sum(evaluator.squared(a.values - b.values, a.sizes, pos).values())
    if den <= 0:
        raise ZeroNorm("reference trajectory has zero norm")
    return float(np.sqrt(num / den))


def dy_error_series(fom_dy, rom_dy):
    """Signed ``Dy_fom - Dy_rom`` per step."""
    a, b = np.asarray(fom_dy, float), np.asarray(rom_dy, float)
    if a.shape != b.shape:
        raise DimensionMismatch("point-A series have different lengths")
    return a - b


@dataclass
class ErrorReport:
    times: np.ndarray
    total: np.ndarray
    per_variable: dict
    spacetime: float
    dy_fom: np.ndarray
    dy_rom: np.ndarray
    dy_error: np.ndarray = field(init=False)

    def __post_init__(self):
        self.dy_error = dy_error_series(self.dy_fom, self.dy_rom)


def compare_trajectories(fom_traj, rom_traj, evaluator):
    """Error report over the times stored in ``rom_traj``.

    Steps after a reduced-model failure are absent from ``rom_traj`` and
    therefore from the report.
    """
    times, total, per = [], [], {v: [] for v in VARIABLES}
    fom_states, rom_states = [], []
    for k, t in enumerate(rom_traj.times):
        j = fom_traj.index_of(t)
        if j is None:
            raise DimensionMismatch(f"full-order trajectory has no state at t={t:.6g}")
        a, b = fom_traj.state(j), rom_traj.state(k)
        tot, pv = relative_spatial_l2(a, b, evaluator)
        times.append(t)
        total.append(tot)
        for v in VARIABLES:
            per[v].append(pv[v])
        fom_states.append(a)
        rom_states.append(b)
    st = relative_spacetime_l2(fom_states, rom_states, evaluator, fom_traj.dt)
    fy = np.interp(rom_traj.point_times, fom_traj.point_times, fom_traj.point_dy)
    return ErrorReport(np.asarray(times), np.asarray(total), {v: np.asarray(x) for v, x in per.items()}, st,
                       fy, np.asarray(rom_traj.point_dy))
