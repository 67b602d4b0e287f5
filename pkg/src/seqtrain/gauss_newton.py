"""Gauss-Newton iteration for weighted nonlinear least squares.

Minimizes ``||R(x)||_2^2`` where ``R`` already carries the square-root
quadrature weights, so that ``||R(x)||_2`` is the M-norm of the residual
function.  Each iteration takes the minimal-norm solution of the linearized
problem, which is the pseudo-inverse form of ``J^T J dx = -alpha J^T R``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .quadrature import DEFAULT_TAU, solve_least_squares

__all__ = ["GaussNewtonResult", "gauss_newton"]


@dataclass
class GaussNewtonResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    violation: float            # ||J^T R|| relative to its value at the start
    violation_abs: float        # ||J^T R||
    rank: int
    spectrum: np.ndarray
    history: list = field(default_factory=list)   # residual norm after each iterate


def gauss_newton(residual, jacobian, x0, *, max_iter=20, alpha=1.0, line_search=True,
                 tol=1e-9, tau=DEFAULT_TAU, shrink=0.5, armijo=1e-4, max_backtracks=40):
    """Run at most ``max_iter`` Gauss-Newton iterations from ``x0``.

    Stops early once ``||J^T R|| <= tol * ||J^T R(x0)||``.  With
    ``line_search`` the step ``alpha`` is halved until the Armijo condition on
    ``||R||^2`` holds; when no acceptable step is found the iteration stops at
    the current (best) iterate.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    J = jacobian(x)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J))):
        raise NumericalError("non-finite residual or Jacobian at the initial iterate")
    g = J.T @ r
    g0 = float(np.linalg.norm(g))
    rnorm = float(np.linalg.norm(r))
    history = [rnorm]
    rank, spectrum = J.shape[1], np.zeros(0)
    converged = False
    iterations = 0
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol * g0:
            converged = True
            break
        sol = solve_least_squares(J, r, tau)
        rank, spectrum = sol.rank, sol.spectrum
        step = -sol.x
        a = alpha
        trial = x + a * step
        r_new = residual(trial)
        if line_search:
            slope = 2.0 * float(g @ step)
            f0 = rnorm**2
            for _ in range(max_backtracks):
                f1 = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
                if f1 <= f0 + armijo * a * slope:
                    break
                a *= shrink
                trial = x + a * step
                r_new = residual(trial)
            else:
                break
        if not np.all(np.isfinite(r_new)):
            raise NumericalError("non-finite residual after a Gauss-Newton update")
        x, r = trial, r_new
        J = jacobian(x)
        if not np.all(np.isfinite(J)):
            raise NumericalError("non-finite Jacobian after a Gauss-Newton update")
        g = J.T @ r
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)
        iterations += 1
    else:
        converged = float(np.linalg.norm(g)) <= tol * g0
    gnorm = float(np.linalg.norm(g))
    violation = gnorm / g0 if g0 > 0 else 0.0
    return GaussNewtonResult(x, rnorm, iterations, converged, violation, gnorm,
                             rank, spectrum, history)
