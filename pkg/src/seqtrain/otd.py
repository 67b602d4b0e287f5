"""Optimize-then-discretize time stepping.

The parameter velocity solves ``min_eta ||grad_theta u(theta)^T eta - f||_M``
at every instant; the steppers here discretize that flow with the explicit
Euler method or with the zeta-scheme.  Each step records the projection error
``eps_k = ||f - P_theta f||_M`` that drives the a posteriori bounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigurationError, DivergenceError, NumericalError
from .gauss_newton import gauss_newton
from .pde import eval_rhs, rhs_jacobian
from .quadrature import (DEFAULT_TAU, assemble_gram, assemble_moment, norm,
                         solve_least_squares, solve_min_norm)

__all__ = [
    "OtdStepRecord",
    "otd_step_explicit",
    "otd_step_zeta",
    "estimate_projection_error",
    "run_otd",
    "accumulate_bound_lipschitz",
    "accumulate_bound_laplacian",
    "stability_envelope",
    "fit_initial",
]


@dataclass
class OtdStepRecord:
    k: int
    t: float
    theta: np.ndarray
    epsilon: float                  # ||f - P_theta f||_M at theta_k
    sigma_spectrum: np.ndarray      # singular values of P(theta_k)
    effective_rank: int
    norm_M: float                   # ||u(theta_k)||_M
    rhs_norm: float = np.nan        # ||f||_M
    projected_norm: float = np.nan  # ||P_theta f||_M
    inner_iterations: int = 0
    inner_converged: bool = True
    bound_lipschitz: float = np.nan
    bound_laplacian: float = np.nan
    stability_bound: float = np.nan
    error: float = np.nan           # ||u(t_k) - u(theta_k)||_M when a reference exists

    @property
    def sigma_ratio(self):
        s = self.sigma_spectrum
        return float(s[-1] / s[0]) if len(s) and s[0] > 0 else 0.0


def _weighted_samples(model, theta, rule):
    g = model.grad_theta(theta, rule.nodes)
    return (g * rule.sqrt_weights).T


def _project(model, theta, rhs_vals, rule, tau):
    J = _weighted_samples(model, theta, rule)
    return solve_least_squares(J, rule.sqrt_weights * rhs_vals, tau)


def estimate_projection_error(model, theta, rhs_vals, rule, tau=DEFAULT_TAU):
    """M-norm residual of projecting ``rhs_vals`` onto the tangent span at ``theta``."""
    return _project(model, theta, np.asarray(rhs_vals, dtype=float), rule, tau).residual_norm


def _check_singular(sol, model, on_singular):
    if on_singular == "raise" and sol.rank < model.n_params:
        raise NumericalError(
            f"Gram matrix has effective rank {sol.rank} < {model.n_params}")


def otd_step_explicit(model, theta, rhs, t, dt, rule, tau=DEFAULT_TAU, *,
                      solver="lstsq", on_singular="min-norm", k=0):
    """One explicit Euler step; returns ``(theta_next, record_for_theta)``.

    ``solver="normal"`` goes through the assembled Gram matrix instead of the
    weighted least-squares problem; it exists for cross-checks.
    """
    theta = model.check_theta(theta)
    f = eval_rhs(rhs, t, model, theta, rule.nodes)
    if solver == "lstsq":
        sol = _project(model, theta, dt * f, rule, tau)
        eta = sol.x
        proj = norm(rule, model.grad_theta(theta, rule.nodes).T @ eta) / dt
        eps = sol.residual_norm / dt
        spectrum, rank = sol.spectrum, sol.rank
    elif solver == "normal":
        P = assemble_gram(model, theta, rule, tau)
        sol = solve_min_norm(P, assemble_moment(model, theta, f, rule), tau)
        eta = dt * sol.x
        tangent = model.grad_theta(theta, rule.nodes).T @ eta
        proj = norm(rule, tangent) / dt
        eps = norm(rule, tangent - dt * f) / dt
        spectrum, rank = sol.spectrum, sol.rank
    else:
        raise ConfigurationError(f"unknown solver {solver!r}")
    _check_singular(sol, model, on_singular)
    theta_next = theta + eta
    record = OtdStepRecord(k, t, theta.copy(), eps, spectrum, rank,
                           norm(rule, model.eval(theta, rule.nodes)),
                           norm(rule, f), proj)
    if not np.all(np.isfinite(theta_next)):
        raise DivergenceError(f"non-finite parameters after step {k}", record)
    return theta_next, record


def otd_step_zeta(model, theta, rhs, t, dt, zeta, rule, tau=DEFAULT_TAU, *,
                  max_iter=20, tol=1e-10, line_search=True, on_singular="min-norm", k=0):
    """One zeta-scheme step; ``zeta = 1`` is exactly :func:`otd_step_explicit`.

    For ``zeta < 1`` the blended objective
    ``||grad u(theta')^T (theta' - theta) - dt [zeta f_k + (1 - zeta) f(theta')]||_M``
    is minimized by Gauss-Newton, started from the explicit predictor.  The
    Jacobian includes the curvature term ``H(theta') (theta' - theta)``.
    """
    if not 0.0 <= zeta <= 1.0:
        raise ConfigurationError(f"zeta must lie in [0, 1], got {zeta}")
    theta_pred, record = otd_step_explicit(model, theta, rhs, t, dt, rule, tau,
                                           on_singular=on_singular, k=k)
    if zeta == 1.0:
        return theta_pred, record
    nodes, sw = rule.nodes, rule.sqrt_weights
    theta = record.theta
    frozen = zeta * eval_rhs(rhs, t, model, theta, nodes) if zeta > 0 else 0.0
    t_next = t + dt

    def residual(th):
        g = model.grad_theta(th, nodes)
        f_new = eval_rhs(rhs, t_next, model, th, nodes)
        return sw * (g.T @ (th - theta) - dt * (frozen + (1.0 - zeta) * f_new))

    def jacobian(th):
        g = model.grad_theta(th, nodes)
        hv = model.hessian_vector(th, th - theta, nodes)
        jf = rhs_jacobian(rhs, t_next, model, th, nodes)
        return ((g + hv - dt * (1.0 - zeta) * jf) * sw).T

    res = gauss_newton(residual, jacobian, theta_pred, max_iter=max_iter, tol=tol,
                       tau=tau, line_search=line_search)
    record.inner_iterations = res.iterations
    record.inner_converged = res.converged
    if not np.all(np.isfinite(res.x)):
        raise DivergenceError(f"non-finite parameters after step {k}", record)
    return res.x, record


def _final_record(model, theta, rhs, t, rule, tau, k):
    f = eval_rhs(rhs, t, model, theta, rule.nodes)
    sol = _project(model, theta, f, rule, tau)
    proj = float(np.sqrt(max(norm(rule, f) ** 2 - sol.residual_norm**2, 0.0)))
    return OtdStepRecord(k, t, theta.copy(), sol.residual_norm, sol.spectrum, sol.rank,
                         norm(rule, model.eval(theta, rule.nodes)), norm(rule, f), proj)


def run_otd(model, theta0, rhs, rule, dt, n_steps, *, zeta=1.0, tau=DEFAULT_TAU, t0=0.0,
            max_iter=20, tol=1e-10, on_singular="min-norm", blowup=1e8, callback=None):
    """Integrate ``n_steps`` steps; returns records for ``theta_0 .. theta_K``.

    A step whose M-norm exceeds ``blowup`` times the initial norm (or turns
    non-finite) raises :class:`DivergenceError` with the records so far.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    theta = np.array(theta0, dtype=float)
    records = []
    ref_norm = None
    for k in range(n_steps):
        t = t0 + k * dt
        try:
            theta_next, rec = otd_step_zeta(model, theta, rhs, t, dt, zeta, rule, tau,
                                            max_iter=max_iter, tol=tol,
                                            on_singular=on_singular, k=k)
        except DivergenceError as exc:
            exc.records = records + ([exc.last_record] if exc.last_record else [])
            raise
        records.append(rec)
        if callback is not None:
            callback(rec)
        ref_norm = rec.norm_M if ref_norm is None else ref_norm
        if not np.all(np.isfinite(theta_next)):
            raise DivergenceError(f"non-finite parameters after step {k}", rec, records)
        theta = theta_next
        size = norm(rule, model.eval(theta, rule.nodes))
        if not np.isfinite(size) or size > blowup * max(ref_norm, 1e-300):
            raise DivergenceError(f"solution norm blew up at step {k + 1}", rec, records)
    last = _final_record(model, theta, rhs, t0 + n_steps * dt, rule, tau, n_steps)
    records.append(last)
    if callback is not None:
        callback(last)
    return records


# ---------------------------------------------------------------------------
# a posteriori bounds and stability envelopes
# ---------------------------------------------------------------------------

def _trapezoid_cumulative(times, values):
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(times)
    if times.size > 1:
        out[1:] = np.cumsum(0.5 * np.diff(times) * (values[1:] + values[:-1]))
    return out


def _gronwall(times, eps, rate, e0):
    times = np.asarray(times, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(eps < 0):
        raise ConfigurationError("projection errors must be non-negative")
    integral = _trapezoid_cumulative(times, np.exp(-rate * times) * eps)
    return np.exp(rate * times) * (e0 + integral)


def accumulate_bound_lipschitz(times, epsilons, C, e0):
    """``e^{C t} e0 + e^{C t} int_0^t e^{-C s} eps(s) ds`` at each step time.

    The integral uses the trapezoid rule on the step times.
    """
    if C < 0:
        raise ConfigurationError("Lipschitz constant must be non-negative")
    return _gronwall(times, epsilons, float(C), float(e0))


def accumulate_bound_laplacian(times, epsilons, C, lam, e0):
    """Same accumulation with rate ``C - lam`` (heat-type right-hand sides)."""
    if C < 0 or lam <= 0:
        raise ConfigurationError("need C >= 0 and a positive eigenvalue")
    return _gronwall(times, epsilons, float(C) - float(lam), float(e0))


def stability_envelope(times, norm0, C, C0, lam=None):
    """``|u_0| e^{c t} + (C0 / c)(e^{c t} - 1)`` with ``c = C`` or ``C - lam``."""
    if C < 0 or C0 < 0:
        raise ConfigurationError("stability constants must be non-negative")
    times = np.asarray(times, dtype=float)
    rate = float(C) - (float(lam) if lam is not None else 0.0)
    if rate == 0.0:
        return norm0 + C0 * times
    growth = np.exp(rate * times)
    return norm0 * growth + C0 / rate * (growth - 1.0)


def fit_initial(model, target, rule, *, seed=0, theta_init=None, max_nfev=2000, tol=1e-14):
    """Least-squares fit of ``u(theta_0)`` to ``target`` values at the nodes.

    Trust-region least squares (scipy) with the analytic Jacobian, started
    from ``model.random_params`` drawn with ``seed`` unless ``theta_init`` is
    given.  Returns ``(theta_0, e_0)`` with ``e_0 = ||u(theta_0) - target||_M``.
    """
    target = np.asarray(target, dtype=float)
    if theta_init is None:
        theta_init = model.random_params(np.random.default_rng(seed))
    sw = rule.sqrt_weights
    res = least_squares(lambda th: sw * (model.eval(th, rule.nodes) - target),
                        np.asarray(theta_init, dtype=float),
                        jac=lambda th: (model.grad_theta(th, rule.nodes) * sw).T,
                        method="trf", x_scale="jac", xtol=tol, ftol=tol, gtol=tol,
                        max_nfev=max_nfev)
    theta = res.x
    return theta, norm(rule, model.eval(theta, rule.nodes) - target)
