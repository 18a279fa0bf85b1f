import numpy as np
import pytest
from hypothesis import given, strategies as st

from subsurr.solvers import NewtonOptions, SolverError, SpdViolationError, cg, newton_cg


@given(n=st.integers(2, 30), seed=st.integers(0, 1000))
def test_cg_solves_spd(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B @ B.T + n * np.eye(n)
    b = rng.standard_normal(n)
    res = cg(A, b, tol=1e-12)
    assert res.converged
    np.testing.assert_allclose(A @ res.x, b, atol=1e-10 * np.linalg.norm(b))
    w = np.linalg.eigvalsh(A)
    assert w[0] * (1 - 1e-6) <= res.ritz_min and res.ritz_max <= w[-1] * (1 + 1e-6)


def test_cg_matvec_and_preconditioner():
    A = np.diag([1.0, 10.0, 100.0])
    res = cg(lambda v: A @ v, np.ones(3), precond=lambda r: r / np.diag(A))
    assert res.iterations == 1
    np.testing.assert_allclose(res.x, [1.0, 0.1, 0.01])


def test_cg_detects_indefinite():
    with pytest.raises(SpdViolationError, match="curvature"):
        cg(np.diag([1.0, -1.0]), np.ones(2))


def test_cg_detects_singular_psd():
    A = np.array([[1.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(SpdViolationError):
        cg(A, np.array([1.0, 0.0]))


def test_cg_zero_rhs():
    res = cg(np.eye(3), np.zeros(3))
    assert res.converged and res.iterations == 0


def test_newton_on_cubic():
    def residual(u):
        return u ** 3 + u - np.array([2.0, 10.0])

    u, rep = newton_cg(residual, lambda u: np.diag(3 * u ** 2 + 1), np.zeros(2),
                       np.arange(2), NewtonOptions())
    np.testing.assert_allclose(u, [1.0, 2.0], rtol=1e-12)
    hist = rep.residual_history
    assert hist[-1] <= 1e-10 * hist[0]
    # quadratic convergence near the root
    assert hist[-1] < hist[-2] ** 1.5


def test_newton_respects_fixed_dofs():
    u0 = np.array([5.0, 0.0])
    u, _ = newton_cg(lambda u: np.array([0.0, u[1] - 1.0]), lambda u: np.eye(1), u0,
                     np.array([1]), NewtonOptions())
    assert u[0] == 5.0 and u[1] == pytest.approx(1.0)


def test_newton_failure_raises_with_history():
    with pytest.raises(SolverError) as exc:
        newton_cg(lambda u: np.array([np.arctan(u[0]) + 2.0]), lambda u: np.eye(1),
                  np.zeros(1), np.arange(1), NewtonOptions(max_iters=3))
    assert not isinstance(exc.value, SpdViolationError)
    assert len(exc.value.residual_history) == 4


def test_newton_jacobi_rejects_negative_diagonal():
    with pytest.raises(SpdViolationError):
        newton_cg(lambda u: u - 1.0, lambda u: -np.eye(2), np.zeros(2), np.arange(2),
                  NewtonOptions(preconditioner="jacobi"))
