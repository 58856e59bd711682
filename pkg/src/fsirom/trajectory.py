"""Stored time histories of full-order or reconstructed reduced solutions."""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .fem import BLOCKS, FieldState

TRAJ_MAGIC = b"FSITRAJ1"


@dataclass
class Trajectory:
    """Sequence of stored states plus the point-A vertical displacement.

    ``states`` may be thinned (every ``snapshot_every`` steps); ``point_times``
    and ``point_dy`` hold one entry per time step.
    """

    dt: float
    sizes: dict
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)
    point_times: list = field(default_factory=list)
    point_dy: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    linear_solve_time: float = 0.0
    linear_solves: int = 0

    def append_state(self, state):
        self.times.append(float(state.time))
        self.values.append(np.array(state.values, dtype=np.float64))

    def append_point(self, t, dy):
        self.point_times.append(float(t))
        self.point_dy.append(float(dy))

    def __len__(self):
        return len(self.times)

    def state(self, k):
        return FieldState(self.times[k], self.values[k], dict(self.sizes))

    def states(self):
        return [self.state(k) for k in range(len(self))]

    def index_of(self, t, tol=None):
        """Index of the stored state at time ``t`` or ``None``."""
        tol = 1e-6 * self.dt if tol is None else tol
        times = np.asarray(self.times)
        if times.size == 0:
            return None
        k = int(np.argmin(np.abs(times - t)))
        return k if abs(times[k] - t) <= tol else None

    def state_at(self, t):
        k = self.index_of(t)
        return None if k is None else self.state(k)

    def matrix(self):
        """States as columns, ``(n_dofs, n_states)``."""
        return np.column_stack(self.values) if self.values else np.zeros((sum(self.sizes.values()), 0))

    def window(self, t0, t1):
        """New trajectory restricted to ``t0 <= t <= t1`` (inclusive, with tolerance)."""
        tol = 1e-6 * self.dt
        out = Trajectory(self.dt, dict(self.sizes))
        for t, v in zip(self.times, self.values):
            if t0 - tol <= t <= t1 + tol:
                out.times.append(t)
                out.values.append(v)
        for t, y in zip(self.point_times, self.point_dy):
            if t0 - tol <= t <= t1 + tol:
                out.append_point(t, y)
        return out


def save_trajectory(traj, path):
    """Binary layout: magic, little-endian u64 header, float64 payload.

    Header: ``n_u, n_p, n_d, n_m, n_states, n_points``. Payload: ``dt``,
    state times, state values (row per state), point times, point ``dy``.
    Timings are not stored, so reruns give byte-identical files.
    """
    header = [traj.sizes[b] for b in BLOCKS] + [len(traj), len(traj.point_times)]
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<6Q", *header))
        np.asarray([traj.dt], "<f8").tofile(fh)
        np.asarray(traj.times, "<f8").tofile(fh)
        if len(traj):
            np.asarray(traj.matrix().T, "<f8").tofile(fh)
        np.asarray(traj.point_times, "<f8").tofile(fh)
        np.asarray(traj.point_dy, "<f8").tofile(fh)


def load_trajectory(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != TRAJ_MAGIC:
        raise ParseError(f"{path}: not a trajectory file")
    if len(raw) < 8 + 48:
        raise ParseError(f"{path}: truncated header")
    header = struct.unpack("<6Q", raw[8:56])
    sizes = dict(zip(BLOCKS, header[:4]))
    n_states, n_points = header[4], header[5]
    n_dofs = sum(header[:4])
    expected = 1 + n_states * (1 + n_dofs) + 2 * n_points
    payload = np.frombuffer(raw[56:], dtype="<f8")
    if payload.size != expected:
        raise ParseError(f"{path}: payload has {payload.size} values, expected {expected}")
    traj = Trajectory(float(payload[0]), sizes)
    pos = 1
    traj.times = payload[pos:pos + n_states].tolist()
    pos += n_states
    vals = payload[pos:pos + n_states * n_dofs].reshape(n_states, n_dofs)
    traj.values = [row.copy() for row in vals]
    pos += n_states * n_dofs
    traj.point_times = payload[pos:pos + n_points].tolist()
    traj.point_dy = payload[pos + n_points:pos + 2 * n_points].tolist()
    return traj
