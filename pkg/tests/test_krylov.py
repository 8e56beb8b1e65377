import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrspike.krylov import BreakdownError, IterConfig, SolveReport, bicgstab, cg, residual_history_csv
from lrspike.sparse_core import spmv
from lrspike.synthetic import laplacian_2d


def _op(D):
    return lambda v: D @ v


def test_identity_half_iteration():
    b = np.arange(1.0, 6.0)
    x, rep = bicgstab(lambda v: v, None, b, IterConfig(tol=1e-12))
    assert rep.converged and rep.iterations == 0.5
    assert np.array_equal(x, b)
    assert rep.precond_applications == 1


def test_exact_preconditioner_one_iteration(rng):
    D = rng.standard_normal((30, 30)) + 30 * np.eye(30)
    Dinv = np.linalg.inv(D)
    b = rng.standard_normal(30)
    x, rep = bicgstab(_op(D), _op(Dinv), b, IterConfig(tol=1e-12))
    assert rep.converged and rep.iterations <= 1
    assert np.linalg.norm(D @ x - b) / np.linalg.norm(b) <= 1e-12


def test_diag_1_to_10():
    D = np.diag(np.arange(1.0, 11.0))
    b = np.ones(10)
    x, rep = bicgstab(_op(D), None, b, IterConfig(tol=1e-10))
    assert rep.converged and rep.iterations <= 10
    assert np.allclose(x, 1.0 / np.arange(1.0, 11.0), rtol=1e-9)


def test_reported_residual_is_true_residual(rng):
    D = rng.standard_normal((60, 60)) + 12 * np.eye(60)
    b = rng.standard_normal(60)
    x, rep = bicgstab(_op(D), None, b, IterConfig(tol=1e-9))
    true = np.linalg.norm(b - D @ x) / np.linalg.norm(b)
    assert abs(rep.final_residual - true) <= 1e-13
    assert rep.final_residual <= 1e-9


def test_precond_application_count(rng):
    D = rng.standard_normal((50, 50)) + 10 * np.eye(50)
    _, rep = bicgstab(_op(D), lambda v: v / 10.0, rng.standard_normal(50), IterConfig(tol=1e-10))
    full = int(np.floor(rep.iterations))
    trailing = 1 if rep.iterations != full else 0
    assert rep.precond_applications == 2 * full + trailing


def test_deterministic(rng):
    D = rng.standard_normal((40, 40)) + 9 * np.eye(40)
    b = rng.standard_normal(40)
    x1, r1 = bicgstab(_op(D), None, b, IterConfig(tol=1e-10))
    x2, r2 = bicgstab(_op(D), None, b, IterConfig(tol=1e-10))
    assert np.array_equal(x1, x2) and r1.residual_history == r2.residual_history


def test_multi_rhs_independent_columns(rng):
    D = rng.standard_normal((40, 40)) + 8 * np.eye(40)
    B = rng.standard_normal((40, 3))
    X, rep = bicgstab(_op(D), None, B, IterConfig(tol=1e-10))
    for j in range(3):
        xj, rj = bicgstab(_op(D), None, B[:, j], IterConfig(tol=1e-10))
        assert np.allclose(X[:, j], xj, rtol=1e-12, atol=1e-14)
        assert rep.column_iterations[j] == rj.iterations
    assert rep.iterations == max(rep.column_iterations)


def test_zero_rhs_column(rng):
    D = np.eye(5) * 2
    B = np.zeros((5, 2))
    B[:, 1] = 1.0
    X, rep = bicgstab(_op(D), None, B, IterConfig(tol=1e-12))
    assert not X[:, 0].any() and np.allclose(X[:, 1], 0.5)


def test_initial_guess_exact_solution():
    D = np.diag([1.0, 2.0, 3.0])
    b = np.array([1.0, 2.0, 3.0])
    x, rep = bicgstab(_op(D), None, b, IterConfig(tol=1e-12, initial_guess=np.ones(3)))
    assert rep.converged and rep.iterations == 0.0


def test_breakdown_raises_with_partial_result():
    # rotation: r_hat . A r = 0 on the first step
    D = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(BreakdownError) as exc:
        bicgstab(_op(D), None, np.array([1.0, 0.0]), IterConfig(tol=1e-12))
    assert isinstance(exc.value.report, SolveReport)
    assert exc.value.x.shape == (2,)


def test_iteration_limit_reports_nonconvergence(rng):
    D = rng.standard_normal((80, 80)) + 3 * np.eye(80)
    x, rep = bicgstab(_op(D), None, rng.standard_normal(80), IterConfig(tol=1e-14, max_iters=2))
    assert not rep.converged and rep.iterations == 2.0


def test_config_validation():
    with pytest.raises(ValueError):
        IterConfig(tol=0.0)
    with pytest.raises(ValueError):
        IterConfig(max_iters=0)


def test_cg_identity():
    x, rep = cg(lambda v: v, None, np.ones(4), IterConfig(tol=1e-12))
    assert rep.iterations == 0.5 and np.array_equal(x, np.ones(4))


def test_cg_laplacian_vs_dense():
    A = laplacian_2d(16, 16)
    b = np.linspace(-1, 1, 256)
    x, rep = cg(lambda v: spmv(A, v), None, b, IterConfig(tol=1e-12, max_iters=2000))
    ref = np.linalg.solve(A.to_dense(), b)
    assert rep.converged
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) <= 1e-10


def test_cg_indefinite_breakdown():
    D = np.diag([1.0, -1.0])
    with pytest.raises(BreakdownError):
        cg(_op(D), None, np.array([1.0, 1.0]), IterConfig(tol=1e-12))


def test_cg_deterministic(rng):
    M = rng.standard_normal((30, 30))
    S = M @ M.T + 30 * np.eye(30)
    b = rng.standard_normal(30)
    assert np.array_equal(cg(_op(S), None, b)[0], cg(_op(S), None, b)[0])


def test_stall_detection_stops_early(rng):
    # residual cannot drop below round-off at tol 1e-30
    D = rng.standard_normal((200, 200)) + 20 * np.eye(200)
    b = rng.standard_normal(200)
    x, rep = bicgstab(_op(D), None, b, IterConfig(tol=1e-30, max_iters=500, stall_iters=3))
    assert rep.stalled and not rep.converged and rep.iterations < 500


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**31))
def test_bicgstab_solves_well_conditioned(n, seed):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n, n)) + 2 * np.sqrt(n) * np.eye(n)
    b = rng.standard_normal(n)
    try:
        x, rep = bicgstab(_op(D), None, b, IterConfig(tol=1e-10, max_iters=500))
    except BreakdownError:
        return
    if rep.converged:
        assert np.linalg.norm(D @ x - b) / np.linalg.norm(b) <= 1e-10


def test_history_csv():
    _, rep = bicgstab(lambda v: v, None, np.ones(3), IterConfig(tol=1e-12))
    text = residual_history_csv(rep)
    lines = text.strip().split("\n")
    assert lines[0] == "iteration,relative_residual"
    assert lines[1].startswith("0,") and lines[-1].startswith("final,")
