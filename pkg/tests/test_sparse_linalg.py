import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from smpnp import sparse_linalg
from smpnp.errors import LinearSolveError, SingularMatrixError
from smpnp.sparse_linalg import Ilu0, LinearSolveSpec, small_dense_solve, solve

DIRECT = LinearSolveSpec(method="direct")
KRYLOV = LinearSolveSpec(method="krylov_ilu0")


def lap1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)],
                    [-1, 0, 1], format="csr")


def test_solve_identity(rng):
    b = rng.normal(size=10)
    x = solve(sp.eye(10, format="csr"), b, DIRECT)
    assert np.allclose(x, b)


def test_solve_2x2_hand_elimination():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
    x = solve(A, np.array([3.0, 4.0]), DIRECT)
    assert np.allclose(x, [1.0, 1.0], atol=1e-12)


def test_krylov_matches_direct_on_laplacian(rng):
    A = lap1d(50)
    b = rng.normal(size=50)
    xd = solve(A, b, DIRECT)
    xk = solve(A, b, KRYLOV)
    assert np.linalg.norm(xk - xd) <= 1e-6 * np.linalg.norm(xd)


def test_krylov_matches_direct_on_spd(rng):
    B = rng.normal(size=(30, 30))
    A = sp.csr_matrix(B @ B.T + 30 * np.eye(30))
    b = rng.normal(size=30)
    assert np.allclose(solve(A, b, KRYLOV), solve(A, b, DIRECT), atol=1e-6)


def test_solve_shape_mismatch():
    with pytest.raises(LinearSolveError):
        solve(sp.eye(3, format="csr"), np.zeros(4), DIRECT)


def test_direct_singular():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(LinearSolveError):
        solve(A, np.array([1.0, 2.0]), DIRECT)


def test_spec_validation():
    with pytest.raises(ValueError):
        LinearSolveSpec(method="cholesky")
    with pytest.raises(ValueError):
        LinearSolveSpec(abs_tol=0.0)


def test_ilu0_preserves_pattern(rng):
    A = lap1d(20)
    fac = Ilu0(A)
    P = fac.pattern_matrix()
    assert np.array_equal(P.indptr, A.indptr)
    assert np.array_equal(P.indices, A.indices)


def test_ilu0_exact_on_tridiagonal(rng):
    # no fill occurs, so ILU(0) is an exact factorization
    A = lap1d(15)
    b = rng.normal(size=15)
    x = Ilu0(A).solve(b)
    assert np.allclose(A @ x, b, atol=1e-10)


def test_ilu0_missing_diagonal():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    A.eliminate_zeros()
    with pytest.raises(SingularMatrixError):
        Ilu0(A)


def _cofactor_solve(A, b):
    n = A.shape[0]
    det = np.linalg.det(A)
    x = np.empty(n)
    for j in range(n):
        Aj = A.copy()
        Aj[:, j] = b
        x[j] = np.linalg.det(Aj) / det
    return x


def test_small_dense_identity():
    assert np.allclose(small_dense_solve(np.eye(3), [1.0, 2.0, 3.0]),
                       [1.0, 2.0, 3.0])


def test_small_dense_1x1():
    assert np.allclose(small_dense_solve(np.array([[4.0]]), [2.0]), [0.5])


def test_small_dense_vs_cofactor_oracle(rng):
    for _ in range(20):
        A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
        b = rng.normal(size=4)
        assert np.allclose(small_dense_solve(A, b), _cofactor_solve(A, b),
                           atol=1e-12)


def test_small_dense_rejects_large_and_singular():
    with pytest.raises(LinearSolveError):
        small_dense_solve(np.eye(9), np.zeros(9))
    with pytest.raises(SingularMatrixError):
        small_dense_solve(np.zeros((2, 2)), np.ones(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**31 - 1))
def test_small_dense_matches_numpy(n, seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n)) + n * np.eye(n)
    b = r.normal(size=n)
    assert np.allclose(small_dense_solve(A, b), np.linalg.solve(A, b),
                       rtol=1e-9, atol=1e-9)
