import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_spd
from coordcond.linalg import (
    DENSE_CUTOFF, NotPositiveDefiniteError, SingularBlockError, batched_solve, block_conditions,
    delete_rowcol, factorize, small_solve,
)


def _laplacian(n: int, shift: float = 0.0) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), (2.0 + shift) * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


class TestFactorization:
    @pytest.mark.parametrize("n", [1, 7, DENSE_CUTOFF - 1, DENSE_CUTOFF, 600])
    def test_solves(self, n, rng):
        A = _laplacian(n, 0.01)
        b = rng.standard_normal((n, 3))
        x = factorize(A).solve(b)
        np.testing.assert_allclose(A @ x, b, atol=1e-8 * np.abs(b).max())

    def test_dense_input(self, rng):
        A = random_spd(rng, 12)
        b = rng.standard_normal(12)
        np.testing.assert_allclose(factorize(A).solve(b), np.linalg.solve(A, b), rtol=1e-9)

    @pytest.mark.parametrize("n", [10, 400])
    def test_indefinite_raises(self, n):
        A = _laplacian(n).tolil()
        A[n // 2, n // 2] = -5.0
        with pytest.raises(NotPositiveDefiniteError):
            factorize(A.tocsr())

    def test_empty(self):
        f = factorize(sp.csr_matrix((0, 0)))
        assert f.solve(np.zeros(0)).shape == (0,)

    def test_non_square(self):
        with pytest.raises(ValueError):
            factorize(np.zeros((2, 3)))


class TestDeleteRowCol:
    def test_principal_submatrix(self, rng):
        A = rng.standard_normal((6, 6))
        sub, keep = delete_rowcol(A, [1, 4])
        assert keep.tolist() == [0, 2, 3, 5]
        np.testing.assert_array_equal(sub.toarray(), A[np.ix_(keep, keep)])


class TestSmallSolves:
    def test_small_solve(self, rng):
        A = random_spd(rng, 3)
        B = rng.standard_normal((3, 2))
        np.testing.assert_allclose(A @ small_solve(A, B), B, atol=1e-12)

    def test_singular(self):
        with pytest.raises(SingularBlockError) as exc:
            small_solve(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))
        assert exc.value.cond > 1e14

    def test_too_large(self):
        with pytest.raises(ValueError):
            small_solve(np.eye(4), np.ones(4))

    def test_batched(self, rng):
        A = np.stack([random_spd(rng, 2) for _ in range(5)])
        b = rng.standard_normal((5, 2))
        x = batched_solve(A, b)
        np.testing.assert_allclose(np.einsum("kij,kj->ki", A, x), b, atol=1e-12)
        X = batched_solve(A, rng.standard_normal((5, 2, 3)))
        assert X.shape == (5, 2, 3)

    def test_block_conditions(self):
        A = np.stack([np.diag([1.0, 4.0]), np.zeros((2, 2))])
        np.testing.assert_allclose(block_conditions(A), [4.0, np.inf])
