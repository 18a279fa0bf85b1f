"""Conjugate gradient with curvature monitoring, and a Newton driver.

CG reports the extreme Ritz values of the Lanczos tridiagonal built from its
own coefficients, and aborts on the first search direction whose curvature
is non-positive (or negligible relative to the largest curvature seen).
Nothing here regularizes an indefinite operator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Newton did not converge, or a residual became non-finite."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class SpdViolationError(SolverError):
    """CG met a direction with non-positive (or vanishing) curvature."""


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float
    ritz_min: float = np.nan
    ritz_max: float = np.nan


def _apply(A, x):
    return A(x) if callable(A) else A @ x


def cg(A, b, x0=None, tol=1e-12, maxiter=None, precond=None, curvature_tol=1e-13,
       label="operator") -> CGResult:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    ``A`` is a matrix or a callable matvec.  ``precond`` is an optional
    callable applying an SPD preconditioner.  Convergence is
    ``||r|| <= tol * ||b||``.  Raises :class:`SpdViolationError` when
    ``p^T A p <= curvature_tol * max_curvature * ||p||^2``.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - _apply(A, x) if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CGResult(np.zeros(n), 0, True, 0.0)
    target = tol * bnorm
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = r @ z
    alphas: List[float] = []
    betas: List[float] = []
    kmax = 0.0
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > target and it < maxiter:
        Ap = _apply(A, p)
        pAp = p @ Ap
        pp = p @ p
        curv = pAp / pp
        if not np.isfinite(pAp) or pAp <= 0.0 or curv <= curvature_tol * kmax:
            raise SpdViolationError(
                f"{label}: non-positive curvature p^T A p = {pAp:.3e} "
                f"(|p|^2 = {pp:.3e}, largest curvature seen {kmax:.3e}) at CG iteration {it}")
        kmax = max(kmax, curv)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = precond(r) if precond is not None else r
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
        alphas.append(alpha)
        betas.append(beta)
        rnorm = np.linalg.norm(r)
        it += 1
    ritz_min, ritz_max = _ritz_extremes(alphas, betas)
    return CGResult(x, it, rnorm <= target, float(rnorm), ritz_min, ritz_max)


def _ritz_extremes(alphas, betas):
    m = len(alphas)
    if m == 0:
        return np.nan, np.nan
    a = np.asarray(alphas)
    bt = np.asarray(betas)
    diag = 1.0 / a
    diag[1:] += bt[:-1] / a[:-1]
    off = np.sqrt(np.abs(bt[:-1])) / a[:-1]
    ev = eigvalsh_tridiagonal(diag, off) if m > 1 else diag
    return float(ev.min()), float(ev.max())


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    atol: float = 1e-14
    max_iters: int = 50
    cg_tol: float = 1e-12
    cg_maxiter: Optional[int] = None      # default 10 x free dofs
    preconditioner: str = "none"          # "none" | "jacobi"
    line_search: bool = False


@dataclass
class NewtonReport:
    iterations: int = 0
    cg_iterations: int = 0
    residual_history: List[float] = field(default_factory=list)
    ritz_min: float = np.inf
    ritz_max: float = -np.inf
    cg_unconverged: int = 0

    def as_dict(self):
        return {
            "newton_iters": self.iterations,
            "cg_iters": self.cg_iterations,
            "min_eig": None if not np.isfinite(self.ritz_min) else self.ritz_min,
            "max_eig": None if not np.isfinite(self.ritz_max) else self.ritz_max,
            "residual_history": list(self.residual_history),
            "cg_unconverged": self.cg_unconverged,
        }


def newton_cg(residual: Callable[[np.ndarray], np.ndarray],
              tangent: Callable[[np.ndarray], object],
              u0: np.ndarray, free: np.ndarray, opts: NewtonOptions,
              energy: Optional[Callable[[np.ndarray], float]] = None,
              force_scale: float = 0.0, label: str = "tangent",
              diagonal: Optional[Callable[[np.ndarray], np.ndarray]] = None):
    """Newton iteration on the free dofs with a CG inner solve.

    ``residual(u)`` returns the full residual vector; ``tangent(u)`` returns
    a matrix or matvec acting on free-dof vectors.  Convergence is
    ``||r_free|| <= max(tol * ref, atol)`` with ``ref`` the larger of the
    initial free residual norm and ``force_scale``.
    """
    u = np.array(u0, dtype=np.float64)
    rep = NewtonReport()
    r = residual(u)[free]
    rn = float(np.linalg.norm(r))
    ref = max(rn, force_scale)
    rep.residual_history.append(rn)
    stop = max(opts.tol * ref, opts.atol)
    while rn > stop:
        if not np.isfinite(rn):
            raise SolverError(f"{label}: non-finite residual", rep.residual_history)
        if rep.iterations >= opts.max_iters:
            raise SolverError(
                f"{label}: Newton did not converge in {opts.max_iters} iterations "
                f"(residual {rn:.3e}, target {stop:.3e})", rep.residual_history)
        T = tangent(u)
        pre = None
        if opts.preconditioner == "jacobi":
            d = diagonal(u) if diagonal is not None else np.asarray(T.diagonal())
            if np.any(d <= 0):
                raise SpdViolationError(f"{label}: non-positive tangent diagonal")
            pre = lambda v, d=d: v / d  # noqa: E731
        res = cg(T, -r, tol=opts.cg_tol,
                 maxiter=opts.cg_maxiter or 10 * r.size, precond=pre, label=label)
        rep.cg_iterations += res.iterations
        rep.ritz_min = min(rep.ritz_min, res.ritz_min) if np.isfinite(res.ritz_min) else rep.ritz_min
        rep.ritz_max = max(rep.ritz_max, res.ritz_max) if np.isfinite(res.ritz_max) else rep.ritz_max
        if not res.converged:
            rep.cg_unconverged += 1
            log.debug("%s: CG stopped at %d iterations, residual %.3e", label, res.iterations,
                      res.residual_norm)
        du = np.zeros_like(u)
        du[free] = res.x
        step = 1.0
        if opts.line_search and energy is not None:
            e0 = energy(u)
            slope = float(r @ res.x)
            while step > 1e-8 and energy(u + step * du) > e0 + 1e-4 * step * slope:
                step *= 0.5
        u = u + step * du
        rep.iterations += 1
        r = residual(u)[free]
        rn = float(np.linalg.norm(r))
        rep.residual_history.append(rn)
    return u, rep
