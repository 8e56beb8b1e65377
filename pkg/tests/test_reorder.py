import numpy as np
import pytest
import scipy.sparse.csgraph as csgraph
from hypothesis import given, settings, strategies as st

from lrspike.reorder import (
    Permutation,
    SingularScalingError,
    apply_permutation,
    diagonal_scale,
    rcm_ordering,
    reorder,
    strip_disconnected,
)
from lrspike.sparse_core import band_metrics, from_dense
from lrspike.synthetic import laplacian_2d


def test_strip_diagonal_matrix_empties():
    B, kept, removed = strip_disconnected(from_dense(np.diag([1.0, 2.0, 3.0])))
    assert B.shape == (0, 0)
    assert removed.tolist() == [0, 1, 2] and kept.size == 0


def test_strip_tridiagonal_unchanged():
    D = 4 * np.eye(5) + np.eye(5, k=1) + np.eye(5, k=-1)
    A = from_dense(D)
    B, kept, removed = strip_disconnected(A)
    assert B == A and removed.size == 0


def test_strip_mixed_keeps_connected_rows():
    D = np.diag([1.0, 2.0, 3.0, 4.0])
    D[0, 2] = D[2, 0] = 0.5
    B, kept, removed = strip_disconnected(from_dense(D))
    assert kept.tolist() == [0, 2] and removed.tolist() == [1, 3]
    assert np.array_equal(B.to_dense(), D[np.ix_([0, 2], [0, 2])])


def test_scale_diag_4_9():
    A2, rs, cs = diagonal_scale(from_dense(np.diag([4.0, 9.0])))
    assert np.array_equal(A2.to_dense(), np.eye(2))
    assert np.allclose(rs, [0.5, 1 / 3]) and np.allclose(cs, rs)


def test_scale_unit_diagonal_is_noop():
    D = np.eye(3) + 0.2 * np.eye(3, k=1)
    A2, rs, cs = diagonal_scale(from_dense(D))
    assert np.array_equal(A2.to_dense(), D) and np.all(rs == 1) and np.all(cs == 1)


def test_scale_random_spd_and_idempotent(rng):
    M = rng.standard_normal((10, 10))
    S = M @ M.T + 10 * np.eye(10)
    A2, _, _ = diagonal_scale(from_dense(S))
    assert np.max(np.abs(np.abs(A2.diagonal()) - 1)) <= 1e-14
    A3, _, _ = diagonal_scale(A2)
    assert np.max(np.abs(A3.to_dense() - A2.to_dense())) <= 1e-14


def test_scale_zero_diagonal_names_row():
    D = np.array([[1.0, 1.0], [1.0, 0.0]])
    with pytest.raises(SingularScalingError) as exc:
        diagonal_scale(from_dense(D))
    assert exc.value.row == 1


def test_permutation_bijection_checks():
    P = Permutation(np.array([2, 0, 1]))
    assert np.array_equal(P.inverse[P.forward], np.arange(3))
    with pytest.raises(ValueError):
        Permutation(np.array([0, 0, 1]))


def test_rcm_tridiagonal_does_not_widen():
    D = 4 * np.eye(12) + np.eye(12, k=1) + np.eye(12, k=-1)
    A = from_dense(D)
    P = rcm_ordering(A)
    B = apply_permutation(A, P, P)
    assert band_metrics(B)[0].k <= 1


def test_rcm_laplacian_8x8_bandwidth():
    A = laplacian_2d(8, 8)
    P = rcm_ordering(A)
    assert band_metrics(apply_permutation(A, P, P))[0].k <= 8


def test_rcm_is_deterministic_and_bijective(rng):
    D = rng.standard_normal((40, 40)) * (rng.random((40, 40)) < 0.08) + np.eye(40)
    A = from_dense(D)
    P1, P2 = rcm_ordering(A), rcm_ordering(A)
    assert np.array_equal(P1.forward, P2.forward)
    assert np.array_equal(np.sort(P1.forward), np.arange(40))


def test_rcm_never_worse_than_scipy_by_much():
    # reference RCM bandwidth, same graph
    A = laplacian_2d(15, 11)
    ours = band_metrics(apply_permutation(A, rcm_ordering(A), rcm_ordering(A)))[0].k
    ref = csgraph.reverse_cuthill_mckee(A.to_scipy(), symmetric_mode=True)
    ref_k = band_metrics(apply_permutation(A, Permutation(ref), Permutation(ref)))[0].k
    assert ours <= ref_k + 2


def test_apply_permutation_identity_and_reversal(rng):
    D = rng.standard_normal((6, 6)) * (rng.random((6, 6)) < 0.5)
    A = from_dense(D)
    I = Permutation.identity(6)
    assert apply_permutation(A, I, I) == A
    R = Permutation(np.arange(6)[::-1].copy())
    assert apply_permutation(apply_permutation(A, R, R), R, R) == A


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 25), seed=st.integers(0, 2**31))
def test_apply_permutation_dense_oracle(n, seed):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.4)
    rp, cp = Permutation(rng.permutation(n)), Permutation(rng.permutation(n))
    B = apply_permutation(from_dense(D), rp, cp)
    # row r of B is row rp.forward[r] of A, likewise for columns
    assert np.array_equal(B.to_dense(), D[np.ix_(rp.forward, cp.forward)])


def test_apply_permutation_size_mismatch():
    with pytest.raises(ValueError):
        apply_permutation(from_dense(np.eye(3)), Permutation.identity(2), Permutation.identity(3))


def test_pipeline_band_smaller_than_n(rng):
    A = laplacian_2d(10, 10)
    shuffle = Permutation(rng.permutation(100))
    scrambled = apply_permutation(A, shuffle, shuffle)
    R = reorder(scrambled)
    assert R.after[0].k < R.matrix.n_rows
    assert R.after[0].k <= 12


@pytest.mark.parametrize("seed", range(5))
def test_pipeline_solution_mapping(seed):
    rng = np.random.default_rng(seed)
    n = 150
    D = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.03)
    D += np.diag(rng.uniform(1, 5, n) * rng.choice([-1, 1], n))
    D[5, :] = 0.0
    D[:, 5] = 0.0
    D[5, 5] = 3.0  # disconnected row
    A = from_dense(D)
    f = rng.standard_normal(n)
    x_ref = np.linalg.solve(D, f)
    R = reorder(A)
    y = np.linalg.solve(R.matrix.to_dense(), R.map_rhs(f))
    x = R.unmap_solution(y, f, A)
    assert np.linalg.norm(x - x_ref) / np.linalg.norm(x_ref) <= 1e-10
    assert 5 in R.removed.tolist()
