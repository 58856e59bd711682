"""Offline phase: time segmentation, snapshot matrices and POD bases.

Each variable block of the state is reduced separately (``u``, ``p``, ``d``);
the mesh displacement block ``m`` stays full order. A segment's snapshot
matrix holds every stored state from its first to its last time point, so
neighbouring segments share one column.
"""

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import MissingState, NonDivisible, ParseError, RankDeficient, ZeroEnergy, DimensionMismatch
from .fem import BLOCKS
from .numerics import sym_eig_descending

REDUCED_BLOCKS = ("u", "p", "d")
RANK_TOL = 1e-12
POD_MAGIC = b"FSIPOD1\0"
FULL = np.iinfo(np.uint64).max


def _as_steps(value, dt, what):
    k = value / dt
    r = round(k)
    if abs(k - r) > 1e-9 * max(1.0, abs(k)):
        raise NonDivisible(f"{what} {value} is not a multiple of dt={dt}")
    return int(r)


@dataclass(frozen=True)
class SegmentSchedule:
    """Contiguous equal-width segments; each entry is ``(T_g, T_g+1, N_Tg)``."""

    t_start: float
    t_end: float
    dt: float
    segments: tuple

    @property
    def n_segments(self):
        return len(self.segments)

    def segment_of(self, t):
        """Index of the segment whose half-open interval ``(T_g, T_g+1]`` holds ``t``."""
        for g, (t0, t1, _) in enumerate(self.segments):
            if t0 - 1e-9 * self.dt < t <= t1 + 1e-9 * self.dt:
                return g
        raise ValueError(f"time {t} outside the schedule")


def make_schedule(t_start, t_end, segment_width, dt):
    """Split ``[t_start, t_end]`` into segments of ``segment_width``.

    Raises
    ------
    NonDivisible
        If the width is not a multiple of ``dt`` or the interval is not a
        multiple of the width.
    """
    if dt <= 0 or segment_width <= 0 or t_end <= t_start:
        raise ValueError("need dt > 0, segment_width > 0 and t_end > t_start")
    per = _as_steps(segment_width, dt, "segment width")
    n0 = _as_steps(t_start, dt, "t_start")
    total = _as_steps(t_end - t_start, dt, "interval length")
    if total % per:
        raise NonDivisible(f"interval [{t_start}, {t_end}] is not a multiple of width {segment_width}")
    segs = tuple(((n0 + g * per) * dt, (n0 + (g + 1) * per) * dt, per + 1) for g in range(total // per))
    return SegmentSchedule(float(t_start), float(t_end), float(dt), segs)


def build_snapshots(trajectory, schedule):
    """Per-segment snapshot matrices, one dict of blocks per segment.

    Raises
    ------
    MissingState
        If the trajectory lacks a state at any time point of the schedule.
    """
    times = np.asarray(trajectory.times)
    out = []
    for t0, t1, n_t in schedule.segments:
        cols = []
        for j in range(n_t):
            t = t0 + j * schedule.dt
            k = trajectory.index_of(t)
            if k is None:
                raise MissingState(f"no stored state at t={t:.6g}s (trajectory covers "
                                   f"{times.min(initial=np.nan):.6g}..{times.max(initial=np.nan):.6g})")
            cols.append(trajectory.values[k])
        X = np.column_stack(cols)
        out.append(split_blocks(X, trajectory.sizes))
    return out


def split_blocks(X, sizes):
    """Row blocks of a stacked state matrix or vector, keyed by block name."""
    out, start = {}, 0
    for b in BLOCKS:
        out[b] = X[start:start + sizes[b]]
        start += sizes[b]
    if start != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows do not match block sizes {sizes}")
    return out


def correlation(X):
    """Correlation matrix ``X^T X`` of a snapshot block."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        raise ValueError("empty snapshot matrix")
    C = X.T @ X
    return 0.5 * (C + C.T)


def numerical_rank(eigenvalues, tol=None):
    """Count of eigenvalues above ``tol * lambda_1`` (default ``RANK_TOL``)."""
    tol = RANK_TOL if tol is None else tol
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0 or lam[0] <= 0:
        return 0
    return int(np.count_nonzero(lam > tol * lam[0]))


def pod_basis(X, C=None, n_select=None, method="snapshots"):
    """POD modes of the largest eigenpairs of the correlation matrix.

    Parameters
    ----------
    X : (n_dofs, n_snapshots) array
    C : array, optional
        Precomputed correlation matrix (``snapshots`` method only).
    n_select : int, optional
        Number of modes; defaults to the numerical rank.
    method : {"snapshots", "svd"}
        ``snapshots`` forms ``Xi_k = X v_k / sqrt(lambda_k)`` from the
        eigenpairs of ``X^T X``; its rank cut is ``RANK_TOL * lambda_1``.
        ``svd`` takes the left singular vectors of ``X`` with
        ``lambda_k = sigma_k^2``, which resolves eigenvalue ratios far below
        double precision, and uses the usual singular-value rank cut
        ``max(n_dofs, n_snapshots) * eps * sigma_1``.

    Returns
    -------
    Xi : (n_dofs, n_select) array
    eigenvalues : (n_snapshots,) array, descending

    Raises
    ------
    RankDeficient
        If ``n_select`` exceeds the numerical rank.
    """
    X = np.asarray(X, dtype=float)
    if method == "svd":
        U, sv, _ = np.linalg.svd(X, full_matrices=False)
        lam = np.zeros(X.shape[1])
        lam[:sv.size] = sv ** 2
        tol = max(X.shape) * np.finfo(float).eps
        rank = int(np.count_nonzero(sv > tol * sv[0])) if sv.size and sv[0] > 0 else 0
    elif method == "snapshots":
        C = correlation(X) if C is None else np.asarray(C, dtype=float)
        lam, V = sym_eig_descending(C)
        rank = numerical_rank(lam)
    else:
        raise ValueError(f"unknown POD method {method!r}")
    n_select = rank if n_select is None else int(n_select)
    if n_select > rank:
        raise RankDeficient(f"requested {n_select} modes but numerical rank is {rank}")
    if method == "svd":
        return U[:, :n_select].copy(), lam
    Xi = X @ V[:, :n_select] / np.sqrt(lam[:n_select])
    # Trailing modes of the snapshot formula lose orthogonality like
    # eps * lambda_1 / lambda_k; a QR pass restores it. R is close to the
    # identity, so each mode only sheds its components along earlier ones.
    Q, R = np.linalg.qr(Xi)
    return Q * np.sign(np.diag(R)), lam


def pod_rank(X, method="snapshots"):
    """Numerical rank of a snapshot block under the given POD method."""
    X = np.asarray(X, dtype=float)
    if method == "svd":
        sv = np.linalg.svd(X, compute_uv=False)
        return int(np.count_nonzero(sv > max(X.shape) * np.finfo(float).eps * sv[0])) if sv[0] > 0 else 0
    return numerical_rank(sym_eig_descending(correlation(X))[0])


def energy_proportion(eigenvalues, n):
    """Share of the eigenvalue sum captured by the first ``n`` modes."""
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if total <= 0:
        raise ZeroEnergy("all eigenvalues vanish")
    return float(lam[:n].sum() / total)


def select_by_energy(eigenvalues, eps):
    """Smallest ``N`` whose discarded energy share is at most ``eps``."""
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if total <= 0:
        raise ZeroEnergy("all eigenvalues vanish")
    tail = 1.0 - np.cumsum(lam) / total
    n = int(np.argmax(tail <= eps)) + 1 if np.any(tail <= eps) else lam.size
    return min(n, max(numerical_rank(lam), 1))


@dataclass(frozen=True)
class CountRule:
    """Fixed mode counts per time window: ``windows = ((t0, t1, {"u":..,"p":..,"d":..}), ...)``."""

    windows: tuple

    def counts(self, t0, t1, lam, ranks):
        mid = 0.5 * (t0 + t1)
        for a, b, c in self.windows:
            if a <= mid <= b:
                return dict(c)
        raise ValueError(f"no count window covers segment [{t0}, {t1}]")


@dataclass(frozen=True)
class EnergyRule:
    eps: float

    def counts(self, t0, t1, lam, ranks):
        return {b: min(select_by_energy(lam[b], self.eps), max(ranks[b], 1)) for b in lam}


@dataclass(frozen=True)
class RankRule:
    """Keep the numerical rank of every block (full basis)."""

    def counts(self, t0, t1, lam, ranks):
        return dict(ranks)


def paper_count_rule(t_start=2.0, t_end=15.0, scale=1.0):
    """Three-window count schedule (10/15/20 velocity and displacement modes,
    30/40/50 pressure modes), optionally scaled and rounded."""
    edges = [t_start, t_start + 4.0, t_start + 8.0, max(t_end, t_start + 8.0)]
    base = [(10, 30), (15, 40), (20, 50)]
    wins = []
    for k, (nu, npr) in enumerate(base):
        nu_s, np_s = max(1, round(nu * scale)), max(1, round(npr * scale))
        wins.append((edges[k], edges[k + 1], {"u": nu_s, "p": np_s, "d": nu_s}))
    return CountRule(tuple(wins))


@dataclass
class PodBasis:
    """Per-segment reduced bases; ``m`` is always full order."""

    segment: int
    t0: float
    t1: float
    sizes: dict
    modes: dict
    eigenvalues: dict
    monolithic: bool = False
    requested: dict = None
    offset: np.ndarray = None

    def lift(self):
        """Affine part of the expansion; zero unless the snapshots were centred."""
        return np.zeros(self.n_full) if self.offset is None else self.offset

    @property
    def counts(self):
        if self.monolithic:
            return {"upd": self.modes["upd"].shape[1]}
        return {b: self.modes[b].shape[1] for b in REDUCED_BLOCKS}

    @property
    def n_reduced(self):
        return sum(self.counts.values())

    @property
    def n_full(self):
        return sum(self.sizes[b] for b in REDUCED_BLOCKS)

    def phi(self):
        """Dense ``(n_u + n_p + n_d, N)`` basis: block diagonal unless monolithic."""
        if self.monolithic:
            return self.modes["upd"]
        Phi = np.zeros((self.n_full, self.n_reduced))
        r = c = 0
        for b in REDUCED_BLOCKS:
            Xi = self.modes[b]
            Phi[r:r + Xi.shape[0], c:c + Xi.shape[1]] = Xi
            r += Xi.shape[0]
            c += Xi.shape[1]
        return Phi


class BlockPOD(TransformerMixin, BaseEstimator):
    """Variable-wise POD of stacked ``(u, p, d, m)`` state vectors.

    Rows of ``X`` are snapshots. :meth:`transform` returns the concatenated
    coefficients ``(a_u, a_p, a_d)``; :meth:`inverse_transform` returns full
    state rows whose ``m`` block is zero, since the mesh block is recomputed
    from the structure displacement rather than reduced.

    Parameters
    ----------
    sizes : dict
        Block lengths keyed by ``u``, ``p``, ``d``, ``m``.
    n_components : dict, float or None
        Mode counts per block, an energy tolerance ``eps`` or ``None`` for
        the numerical rank.
    monolithic : bool
        Build one basis for the stacked ``(u, p, d)`` vector instead of
        one per block.
    center : bool
        Subtract the snapshot mean before the decomposition. The mean is
        kept as ``mean_`` and becomes the basis offset.
    """

    def __init__(self, sizes=None, n_components=None, monolithic=False, method="snapshots", center=False):
        self.sizes = sizes
        self.n_components = n_components
        self.monolithic = monolithic
        self.method = method
        self.center = center

    def _centred(self, X):
        n_red = sum(self.sizes[b] for b in REDUCED_BLOCKS)
        mean = np.zeros(X.shape[1])
        if self.center:
            mean[:n_red] = X[:, :n_red].mean(axis=0)
        return X - mean, mean

    def _blocks(self, X):
        blocks = split_blocks(X.T, self.sizes)
        if self.monolithic:
            return {"upd": np.vstack([blocks[b] for b in REDUCED_BLOCKS])}
        return {b: blocks[b] for b in REDUCED_BLOCKS}

    def spectrum(self, X):
        """Per-block eigenvalues and numerical ranks without building modes."""
        X = self._centred(np.asarray(X, dtype=float))[0]
        lam, ranks = {}, {}
        for b, Xb in self._blocks(X).items():
            if self.method == "svd":
                sv = np.linalg.svd(Xb, compute_uv=False)
                lam[b] = np.zeros(Xb.shape[1])
                lam[b][:sv.size] = sv ** 2
            else:
                lam[b] = sym_eig_descending(correlation(Xb))[0]
            ranks[b] = pod_rank(Xb, self.method) if self.method == "svd" else numerical_rank(lam[b])
        return lam, ranks

    def _counts(self, lam, ranks):
        nc = self.n_components
        if nc is None:
            return dict(ranks)
        if isinstance(nc, dict):
            if self.monolithic:
                return {"upd": int(nc["upd"] if "upd" in nc else sum(nc[b] for b in REDUCED_BLOCKS))}
            return {b: int(nc[b]) for b in lam}
        return {b: min(select_by_energy(v, float(nc)), max(ranks[b], 1)) for b, v in lam.items()}

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        lam, ranks = self.spectrum(X)
        counts = self._counts(lam, ranks)
        Xc, mean = self._centred(X)
        n_red = sum(self.sizes[b] for b in REDUCED_BLOCKS)
        self.mean_ = mean[:n_red]
        self.components_ = {}
        for b, Xb in self._blocks(Xc).items():
            self.components_[b] = pod_basis(Xb, None, counts[b], self.method)[0]
        self.eigenvalues_ = lam
        self.ranks_ = ranks
        self.n_features_in_ = X.shape[1]
        return self

    def to_basis(self, segment=0, t0=0.0, t1=0.0):
        check_is_fitted(self, "components_")
        return PodBasis(segment, t0, t1, dict(self.sizes), dict(self.components_), dict(self.eigenvalues_),
                        self.monolithic, offset=self.mean_.copy() if self.center else None)

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        n_red = sum(self.sizes[b] for b in REDUCED_BLOCKS)
        return (X[:, :n_red] - self.mean_) @ self.to_basis().phi()

    def inverse_transform(self, A):
        check_is_fitted(self, "components_")
        A = np.atleast_2d(np.asarray(A, dtype=float))
        Phi = self.to_basis().phi()
        if A.shape[1] != Phi.shape[1]:
            raise DimensionMismatch(f"expected {Phi.shape[1]} coefficients, got {A.shape[1]}")
        out = np.zeros((A.shape[0], self.n_features_in_))
        out[:, :Phi.shape[0]] = A @ Phi.T + self.mean_
        return out


def offline_phase(trajectory, schedule, rule=None, monolithic=False, method="snapshots", center=True):
    """One :class:`PodBasis` per segment of ``schedule``.

    ``rule`` is a :class:`CountRule`, :class:`EnergyRule` or
    :class:`RankRule` (default). Counts above a block's numerical rank are
    lowered to the rank; the asked-for counts stay in ``PodBasis.requested``.
    With ``center`` the segment mean is the basis offset, so the modes
    vanish on Dirichlet boundaries and the reduced system can drop the
    constrained rows without losing the inflow forcing.
    """
    rule = rule or RankRule()
    bases = []
    for g, (snap, (t0, t1, _)) in enumerate(zip(build_snapshots(trajectory, schedule), schedule.segments)):
        X = np.vstack([snap[b] for b in BLOCKS]).T
        est = BlockPOD(trajectory.sizes, None, monolithic, method, center)
        lam, ranks = est.spectrum(X)
        requested = rule.counts(t0, t1, lam, ranks)
        if monolithic and "upd" not in requested:
            requested = {"upd": sum(requested.get(b, 0) for b in REDUCED_BLOCKS)}
        est.n_components = {b: min(int(c), ranks[b]) for b, c in requested.items()}
        basis = est.fit(X).to_basis(g, t0, t1)
        basis.requested = dict(requested)
        bases.append(basis)
    return bases


class SegmentedPOD(BaseEstimator):
    """Time-segmented POD over a stored trajectory.

    Parameters
    ----------
    t_start, t_end, segment_width, dt : float
        Segmentation of the reduced interval.
    rule : CountRule, EnergyRule or RankRule, optional
    center : bool
        Use segment means as basis offsets.
    """

    def __init__(self, t_start=2.0, t_end=15.0, segment_width=0.1, dt=0.01, rule=None, monolithic=False,
                 method="snapshots", center=True):
        self.t_start = t_start
        self.t_end = t_end
        self.segment_width = segment_width
        self.dt = dt
        self.rule = rule
        self.monolithic = monolithic
        self.method = method
        self.center = center

    def fit(self, trajectory, y=None):
        self.schedule_ = make_schedule(self.t_start, self.t_end, self.segment_width, self.dt)
        self.bases_ = offline_phase(trajectory, self.schedule_, self.rule, self.monolithic, self.method,
                                    self.center)
        return self


def save_basis(basis, path):
    """Write one segment's basis.

    Layout: magic ``FSIPOD1\\0``; little-endian u64 header ``segment, n_vars,
    centred`` and per variable ``n_dofs, n_snapshots, n_selected``
    (``n_selected`` is ``2**64 - 1`` for a full-order block); then per
    variable the eigenvalues followed by the modes in column-major order.
    A centred basis continues with its offset over the reduced blocks.
    Segment bounds trail as two float64 values.
    """
    names = ["upd"] if basis.monolithic else list(REDUCED_BLOCKS)
    centred = basis.offset is not None
    header = [basis.segment, len(names) + 1, int(centred)]
    for b in names:
        header += [basis.modes[b].shape[0], basis.eigenvalues[b].size, basis.modes[b].shape[1]]
    header += [basis.sizes["m"], 0, FULL]
    with open(path, "wb") as fh:
        fh.write(POD_MAGIC)
        fh.write(struct.pack(f"<{len(header)}Q", *header))
        for b in names:
            np.asarray(basis.eigenvalues[b], "<f8").tofile(fh)
            np.asarray(basis.modes[b], "<f8").T.tofile(fh)
        if centred:
            np.asarray(basis.offset, "<f8").tofile(fh)
        np.asarray([basis.t0, basis.t1], "<f8").tofile(fh)


def load_basis(path, sizes=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != POD_MAGIC:
        raise ParseError(f"{path}: not a basis file")
    try:
        seg, n_vars, centred = struct.unpack("<3Q", raw[8:32])
        if n_vars not in (2, 4) or centred > 1:
            raise ParseError(f"{path}: malformed header")
        meta = struct.unpack(f"<{3 * n_vars}Q", raw[32:32 + 24 * n_vars])
    except struct.error as exc:
        raise ParseError(f"{path}: truncated header") from exc
    pos = 32 + 24 * n_vars
    payload = np.frombuffer(raw[pos:], dtype="<f8")
    reduced = [meta[3 * k:3 * k + 3] for k in range(n_vars - 1)]
    n_full = sum(nh for nh, _, _ in reduced)
    need = sum(nt + nh * ns for nh, nt, ns in reduced) + centred * n_full + 2
    if payload.size != need:
        raise ParseError(f"{path}: payload has {payload.size} values, expected {need}")
    monolithic = n_vars == 2
    names = ["upd"] if monolithic else list(REDUCED_BLOCKS)
    modes, lam = {}, {}
    k = 0
    for b, (nh, nt, ns) in zip(names, reduced):
        lam[b] = payload[k:k + nt].copy()
        k += nt
        modes[b] = payload[k:k + nh * ns].reshape(ns, nh).T.copy()
        k += nh * ns
    offset = payload[k:k + n_full].copy() if centred else None
    if sizes is None:
        if monolithic:
            raise ParseError(f"{path}: block sizes are required for a monolithic basis")
        sizes = {b: modes[b].shape[0] for b in REDUCED_BLOCKS}
        sizes["m"] = meta[3 * (n_vars - 1)]
    return PodBasis(seg, float(payload[-2]), float(payload[-1]), dict(sizes), modes, lam, monolithic,
                    offset=offset)
