"""Sparse and dense linear-algebra kernels.

Sparse matrices are :class:`scipy.sparse.csr_matrix` instances; dense
matrices are two-dimensional float64 :class:`numpy.ndarray` objects.
"""

import warnings

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, NotSymmetric, SingularMatrix

PIVOT_RTOL = 1e-14
SYMMETRY_RTOL = 1e-12


def as_csr(A):
    """Return ``A`` as a canonical float64 CSR matrix (sorted, no duplicates)."""
    A = sp.csr_matrix(A, dtype=np.float64, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_csr(A):
    """Validate the structural invariants of a CSR matrix; return it."""
    n_rows, n_cols = A.shape
    offsets = A.indptr
    if offsets.shape[0] != n_rows + 1 or offsets[0] != 0:
        raise ValueError("row offsets must have length n_rows + 1 and start at 0")
    if np.any(np.diff(offsets) < 0):
        raise ValueError("row offsets must be nondecreasing")
    cols = A.indices
    if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
        raise ValueError("column index out of range")
    for r in range(n_rows):
        row = cols[offsets[r]:offsets[r + 1]]
        if row.size > 1 and np.any(np.diff(row) <= 0):
            raise ValueError(f"column indices of row {r} are not strictly increasing")
    return A


class SparseLU:
    """Direct LU factorization (partial pivoting) of a square sparse matrix.

    The factorization is computed once and can be reused for any number of
    right-hand sides.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A, dtype=np.float64)
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        try:
            self._lu = spla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc
        pivots = np.abs(self._lu.U.diagonal())
        if pivots.size and (not np.all(np.isfinite(pivots))
                            or pivots.min() <= PIVOT_RTOL * pivots.max()):
            raise SingularMatrix(
                f"near-zero pivot {pivots.min():.3e} (max pivot {pivots.max():.3e})")

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.shape[0]:
            raise DimensionMismatch(f"rhs length {b.shape[0]} != {self.shape[0]}")
        return self._lu.solve(b)


def solve_sparse_linear(A, b):
    """Solve ``A x = b`` by sparse LU with partial pivoting.

    Raises
    ------
    SingularMatrix
        If a pivot falls below ``1e-14`` times the largest pivot.
    """
    return SparseLU(A).solve(b)


def sym_eig_descending(C):
    """All eigenpairs of a symmetric positive semidefinite matrix.

    Returns
    -------
    eigenvalues : ndarray
        Sorted in descending order, negative round-off clamped to zero.
    eigenvectors : ndarray
        Orthonormal columns matching ``eigenvalues``.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {C.shape}")
    scale = np.abs(C).max() if C.size else 0.0
    if np.abs(C - C.T).max(initial=0.0) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
        raise NotSymmetric("matrix is not symmetric to 1e-12 relative")
    lam, Q = la.eigh(0.5 * (C + C.T))
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    return lam, Q[:, order]


def dense_solve(A, b):
    """Solve a dense square system with LU and partial pivoting."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"rhs length {b.shape[0]} != {A.shape[0]}")
    if A.shape[0] == 0:
        return np.zeros_like(b)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if not np.all(np.isfinite(pivots)) or pivots.min() <= PIVOT_RTOL * pivots.max():
        raise SingularMatrix("dense matrix is singular to working precision")
    return la.lu_solve((lu, piv), b, check_finite=False)
