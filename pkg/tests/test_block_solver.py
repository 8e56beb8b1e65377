import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from lrspike.block_solver import SingularBlockError, factorize_block, solve_block, solve_block_adjoint
from lrspike.sparse_core import from_dense, identity


def test_identity_no_fill():
    F = factorize_block(identity(6))
    assert F.fill == 0
    b = np.arange(6.0)
    assert np.array_equal(solve_block(F, b), b)


def test_diag_2_4():
    F = factorize_block(from_dense(np.diag([2.0, 4.0])))
    assert np.array_equal(F.U_diag, [2.0, 4.0])
    assert np.array_equal(solve_block(factorize_block(from_dense(np.array([[2.0]]))), np.array([4.0])), [2.0])


def test_adjoint_hand_case():
    F = factorize_block(from_dense(np.array([[1.0, 2.0], [0.0, 1.0]])))
    assert np.allclose(solve_block_adjoint(F, np.array([1.0, 0.0])), [1.0, -2.0], atol=0)


def test_singular_column_reported():
    D = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(SingularBlockError) as exc:
        factorize_block(from_dense(D))
    assert exc.value.column == 1


def test_pivoting_needed():
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    F = factorize_block(from_dense(D))
    assert np.array_equal(solve_block(F, np.array([3.0, 5.0])), [5.0, 3.0])


def test_banded_inverse(banded):
    A, Ad = banded(50, 4, dominance=0.7)
    X = solve_block(factorize_block(A), np.eye(50))
    assert np.max(np.abs(Ad @ X - np.eye(50))) <= 1e-11


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 2**31), density=st.floats(0.05, 0.5), preorder=st.booleans())
def test_random_blocks_vs_dense(n, seed, density, preorder):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n, n)) * (rng.random((n, n)) < density) + np.diag(rng.uniform(0.5, 2, n))
    if np.linalg.cond(D) > 1e6:
        return
    F = factorize_block(from_dense(D), preorder=preorder)
    R = rng.standard_normal((n, 3))
    X = solve_block(F, R)
    Y = solve_block_adjoint(F, R)
    assert np.linalg.norm(D @ X - R) / np.linalg.norm(R) <= 1e-10
    assert np.linalg.norm(D.T @ Y - R) / np.linalg.norm(R) <= 1e-10
    assert np.allclose(X, sla.solve(D, R), rtol=1e-11 * np.linalg.cond(D), atol=1e-11 * np.linalg.cond(D))


def test_multicolumn_equals_columnwise(banded, rng):
    A, _ = banded(40, 3)
    F = factorize_block(A)
    R = rng.standard_normal((40, 4))
    X = solve_block(F, R)
    for j in range(4):
        assert np.array_equal(X[:, j], solve_block(F, R[:, j]))


def test_symmetric_adjoint_equals_solve(rng):
    M = rng.standard_normal((20, 20))
    S = M + M.T + 40 * np.eye(20)
    F = factorize_block(from_dense(S))
    b = rng.standard_normal(20)
    assert np.allclose(solve_block(F, b), solve_block_adjoint(F, b), rtol=1e-13, atol=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        solve_block(factorize_block(identity(3)), np.ones(4))


def test_single_precision_mode(banded, rng):
    A, Ad = banded(40, 3)
    F = factorize_block(A, single_precision=True)
    b = rng.standard_normal(40)
    x = solve_block(F, b)
    assert np.linalg.norm(Ad @ x - b) / np.linalg.norm(b) <= 1e-5
