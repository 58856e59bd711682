"""Online phase: Galerkin-projected Newton solves per time segment.

The reduced step reuses the full-order fixed-point/Newton loop of
:class:`~fsirom.fom.FsiSolver`; only the correction differs. The full
Jacobian and residual are assembled from the expanded state, constrained
rows are zeroed, and the result is projected with the segment basis. Mesh
motion remains full order.
"""

import logging
import time as _time
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, FsiRomError, StepFailure
from .fem import FieldState
from .fom import TimeHistory
from .numerics import dense_solve
from .trajectory import Trajectory

log = logging.getLogger(__name__)


@dataclass
class ReducedState:
    time: float
    coefficients: np.ndarray
    segment: int


def _reduced_len(basis):
    return basis.n_full


def reduce_state(state, basis):
    """Coefficients ``Phi^T (U - U_0)`` of the ``(u, p, d)`` part of ``state``."""
    n = _reduced_len(basis)
    if state.values.size != n + basis.sizes["m"] or any(state.sizes[b] != basis.sizes[b] for b in basis.sizes):
        raise DimensionMismatch("state block sizes do not match the basis")
    return ReducedState(state.time, basis.phi().T @ (state.values[:n] - basis.lift()), basis.segment)


def expand_state(reduced, basis, m=None):
    """Full state ``U_0 + Phi a``; the mesh block is ``m`` (zero when omitted)."""
    a = np.asarray(reduced.coefficients, dtype=float)
    if a.shape != (basis.n_reduced,):
        raise DimensionMismatch(f"expected {basis.n_reduced} coefficients, got {a.shape}")
    m = np.zeros(basis.sizes["m"]) if m is None else np.asarray(m, dtype=float).ravel()
    if m.size != basis.sizes["m"]:
        raise DimensionMismatch("mesh block has the wrong length")
    return FieldState(reduced.time, np.concatenate([basis.lift() + basis.phi() @ a, m]), dict(basis.sizes))


def project_state(state, basis):
    """Orthogonal projection of ``(u, p, d)`` onto the affine basis span; ``m`` kept."""
    red = reduce_state(state, basis)
    return expand_state(red, basis, state.m)


def segment_handoff(final_states, basis):
    """Reduced history for a new segment from the last two expanded states.

    ``final_states`` is ``(state_n-1, state_n)``; a single state stands for
    both levels.
    """
    if len(final_states) == 1:
        final_states = (final_states[0], final_states[0])
    older, newer = final_states[-2], final_states[-1]
    return TimeHistory(project_state(newer, basis), project_state(older, basis))


class RomCorrector:
    """Newton corrections from the projected system ``Phi^T J Phi``."""

    def __init__(self, basis, constrained_rows, config):
        self.basis = basis
        self.phi = basis.phi()
        self.offset = basis.lift()
        self.config = config
        self.mask = np.ones(self.phi.shape[0], bool)
        self.mask[constrained_rows] = False
        self.solve_time = 0.0
        self.project_time = 0.0
        self.n_solves = 0
        self.a = None

    def start(self, X):
        self.a = self.phi.T @ (X - self.offset)
        return self.offset + self.phi @ self.a

    def converged(self, lin):
        r = self.phi[self.mask].T @ lin.residual[self.mask]
        b = self.phi[self.mask].T @ lin.rhs[self.mask]
        rn = np.linalg.norm(r)
        self._r = r
        return rn <= self.config.newton_tol * (1.0 + np.linalg.norm(b)), rn

    def correct(self, X, lin):
        t0 = _time.perf_counter()
        JPhi = lin.jacobian @ self.phi
        Jr = self.phi[self.mask].T @ JPhi[self.mask]
        t1 = _time.perf_counter()
        delta = dense_solve(Jr, -self._r)
        self.solve_time += _time.perf_counter() - t1
        self.project_time += t1 - t0
        self.n_solves += 1
        self.a = self.a + delta
        return self.offset + self.phi @ self.a

    def finish(self, X, lin):
        # constraints live in the snapshots; overwriting would leave the span
        return X


def run_rom(solver, bases, schedule, initial_history, store_every=1):
    """March the reduced model over every segment of ``schedule``.

    Parameters
    ----------
    solver : FsiSolver
        Full-order solver whose operator assembles the systems.
    bases : list of PodBasis
        One basis per segment.
    initial_history : TimeHistory
        States at ``t_start`` and ``t_start - dt`` (from the full model). They
        enter the first segment unprojected.

    Returns
    -------
    Trajectory
        Expanded states, point-A series and accumulated solve times in
        ``linear_solve_time`` (dense solves only). ``stats`` carries the
        reduced dimension per step and, in non-strict mode, a ``failed``
        entry if the march stopped early.
    """
    cfg = solver.config
    if len(bases) != schedule.n_segments:
        raise DimensionMismatch(f"{len(bases)} bases for {schedule.n_segments} segments")
    history = initial_history
    state = history.prev
    traj = Trajectory(cfg.dt, dict(solver.dofmap.sizes))
    traj.append_state(state)
    traj.append_point(state.time, solver.point_a_dy(state))
    traj.project_time = 0.0
    traj.failed = None
    n = int(round(schedule.t_start / cfg.dt))
    k = 0
    for g, basis in enumerate(bases):
        if g > 0:
            history = segment_handoff((history.prev2, history.prev), basis)
        corrector = RomCorrector(basis, solver.op.constrained_rows, cfg)
        t0, t1, n_t = schedule.segments[g]
        for _ in range(n_t - 1):
            n += 1
            k += 1
            t = n * cfg.dt
            before = corrector.solve_time
            try:
                state, info = solver.step(history, t, corrector)
            except FsiRomError as exc:
                if cfg.strict:
                    raise StepFailure(n, t, exc) from exc
                log.warning("reduced march stopped at t=%.4g: %s", t, exc)
                traj.failed = (t, str(exc))
                break
            history = history.advance(state)
            if k % store_every == 0:
                traj.append_state(state)
            traj.append_point(t, solver.point_a_dy(state))
            traj.stats.append({"t": t, "segment": g, "n_reduced": basis.n_reduced,
                               "newton": info.newton_iterations, "fixed_point": info.fixed_point_iterations,
                               "converged": info.converged, "tangled": info.tangled,
                               "solve_time": corrector.solve_time - before})
        traj.linear_solve_time += corrector.solve_time
        traj.linear_solves += corrector.n_solves
        traj.project_time += corrector.project_time
        if traj.failed:
            break
    return traj
