"""Sparse SPD factorization, principal-submatrix extraction and small dense solves."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_CUTOFF = 200


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class SingularBlockError(np.linalg.LinAlgError):
    def __init__(self, msg: str, cond: float):
        super().__init__(msg)
        self.cond = cond


class Factorization:
    """Read-only factor of a symmetric positive definite matrix.

    Below :data:`DENSE_CUTOFF` rows a dense Cholesky is used. Larger systems go
    through SuperLU with a symmetric fill-reducing ordering and pivoting
    disabled, so the diagonal of ``U`` holds the LDL^T pivots and a
    non-positive one flags an indefinite input.
    """

    def __init__(self, A):
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("matrix must be square")
        self.n = n
        self._dense = None
        self._lu = None
        if n == 0:
            return
        if n < DENSE_CUTOFF:
            Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
            try:
                self._dense = sla.cho_factor(Ad, lower=True, check_finite=True)
            except sla.LinAlgError as exc:
                raise NotPositiveDefiniteError(f"non-positive pivot in dense Cholesky: {exc}") from exc
        else:
            A = sp.csc_matrix(A)
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
            piv = lu.U.diagonal()
            if np.any(piv <= 0.0) or not np.all(np.isfinite(piv)):
                raise NotPositiveDefiniteError(f"non-positive pivot (min {piv.min():.3e})")
            self._lu = lu

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        if self._dense is not None:
            return sla.cho_solve(self._dense, b)
        return self._lu.solve(b)


def factorize(A) -> Factorization:
    return Factorization(A)


def delete_rowcol(A, block) -> tuple[sp.csr_matrix, np.ndarray]:
    """Principal submatrix of ``A`` with rows/columns ``block`` removed.

    Returns the submatrix and the kept original indices (row ``k`` of the
    result is row ``keep[k]`` of ``A``).
    """
    A = sp.csr_matrix(A)
    mask = np.ones(A.shape[0], dtype=bool)
    mask[np.asarray(block, dtype=int)] = False
    keep = np.flatnonzero(mask)
    return A[keep][:, keep].tocsr(), keep


def small_solve(A: np.ndarray, B: np.ndarray, max_cond: float = 1e14) -> np.ndarray:
    """Solve a d x d system (d <= 3) with one or more right-hand sides."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] > 3 or A.shape[0] != A.shape[1]:
        raise ValueError("small_solve handles square blocks up to 3x3")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularBlockError(f"singular {A.shape[0]}x{A.shape[0]} block (cond {cond:.3e})", cond)
    return np.linalg.solve(A, B)


def batched_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve stacks ``A[k] X[k] = B[k]``; ``B`` is (m, d) or (m, d, k)."""
    if B.ndim == A.ndim - 1:
        return np.linalg.solve(A, B[..., None])[..., 0]
    return np.linalg.solve(A, B)


def block_conditions(A: np.ndarray) -> np.ndarray:
    """Condition numbers of a stack of small symmetric blocks (inf when singular)."""
    w = np.abs(np.linalg.eigvalsh(A))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(w[:, 0] > 0, w[:, -1] / w[:, 0], np.inf)
