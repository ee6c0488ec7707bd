import numpy as np
import pytest
import scipy.sparse as sp

from kellersegel.femcore import P1Space
from kellersegel.linalg import SolverFailure, solve_general, solve_spd
from kellersegel.mesh import build_uniform_rect_mesh


def _recheck(A, x, b, report, tol):
    res = np.linalg.norm(b - A @ x)
    assert report.converged
    assert abs(res - report.final_residual) <= 1e-13
    assert res <= tol * np.linalg.norm(b)


def test_diagonal_system_one_iteration():
    d = np.array([1.0, 2.0, 4.0, 0.5])
    b = np.array([3.0, -1.0, 2.0, 7.0])
    x, rep = solve_spd(sp.diags(d).tocsr(), b)
    np.testing.assert_allclose(x, b / d, rtol=1e-15)
    assert rep.iterations == 1


def test_elliptic_operator_on_constants():
    S = P1Space(build_uniform_rect_mesh(nx=8, ny=8))
    alpha, c = 1.7, 0.3
    A = S.stiffness + S.mass
    b = alpha * S.lumped * c
    x, rep = solve_spd(A, b)
    np.testing.assert_allclose(x, alpha * c, rtol=1e-11)
    _recheck(A, x, b, rep, 1e-12)


def test_random_spd_against_dense():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((5, 5))
    A = B @ B.T + 5 * np.eye(5)
    b = rng.standard_normal(5)
    x, rep = solve_spd(sp.csr_matrix(A), b)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-10, atol=1e-12)
    _recheck(A, x, b, rep, 1e-12)


def test_general_reproduces_spd():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((6, 6))
    A = sp.csr_matrix(B @ B.T + 6 * np.eye(6))
    b = rng.standard_normal(6)
    x1, _ = solve_spd(A, b)
    x2, _ = solve_general(A, b)
    x3, _ = solve_general(A, b, dense_threshold=0)
    np.testing.assert_allclose(x2, x1, rtol=1e-10)
    np.testing.assert_allclose(x3, x1, rtol=1e-10)


def test_nonsymmetric_3x3_hand_elimination():
    # 4x + y = 6, 2x + 5y + z = 15, 3y + 6z = 24: back substitution gives (1, 2, 3)
    A = sp.csr_matrix(np.array([[4.0, 1.0, 0.0], [2.0, 5.0, 1.0], [0.0, 3.0, 6.0]]))
    b = np.array([6.0, 15.0, 24.0])
    sol, rep = solve_general(A, b)
    np.testing.assert_allclose(sol, [1.0, 2.0, 3.0], rtol=1e-14)
    assert rep.method == "dense"
    sol_k, rep_k = solve_general(A, b, dense_threshold=0)
    np.testing.assert_allclose(sol_k, [1.0, 2.0, 3.0], rtol=1e-9)
    assert rep_k.method == "bicgstab"


def test_large_nonsymmetric_krylov_path():
    S = P1Space(build_uniform_rect_mesh(nx=50, ny=50))
    rng = np.random.default_rng(2)
    U = 0.5 + rng.random(S.n)
    A = S.weighted_stiffness(1 + rng.random(S.n))
    J = (sp.diags(S.lumped / 0.01) + A @ sp.diags(1 / U)).tocsr()
    b = rng.standard_normal(S.n)
    x, rep = solve_general(J, b)
    assert rep.method == "bicgstab" and S.n > 2000
    _recheck(J, x, b, rep, 1e-10)


@pytest.mark.parametrize("dense_threshold", [2000, 0])
def test_singular_system_reports_failure(dense_threshold):
    S = P1Space(build_uniform_rect_mesh(nx=4, ny=4))
    b = np.ones(S.n)  # not orthogonal to the constant kernel of K
    with pytest.raises(SolverFailure) as err:
        solve_general(S.stiffness, b, max_iter=500, dense_threshold=dense_threshold)
    assert not err.value.report.converged


def test_cg_nonconvergence_reports_failure():
    S = P1Space(build_uniform_rect_mesh(nx=10, ny=10))
    with pytest.raises(SolverFailure):
        solve_spd(S.stiffness + S.mass, np.ones(S.n), max_iter=2)


def test_deterministic():
    S = P1Space(build_uniform_rect_mesh(nx=12, ny=12))
    b = np.sin(np.arange(S.n))
    x1, _ = solve_spd(S.stiffness + S.mass, b)
    x2, _ = solve_spd(S.stiffness + S.mass, b)
    assert np.array_equal(x1, x2)
