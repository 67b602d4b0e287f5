"""Discretize-then-optimize time stepping.

Each step minimizes the M-norm of a time-discrete residual over the new
parameter with Gauss-Newton, starting from the previous parameter.  Bounds
and envelopes take the recorded residual norms as input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError, NumericalError
from .gauss_newton import gauss_newton
from .pde import eval_rhs, rhs_jacobian
from .quadrature import DEFAULT_TAU, norm

__all__ = [
    "DtoStepRecord",
    "dto_residual",
    "imex_residual",
    "dto_gauss_newton_solve",
    "dto_step_imex",
    "run_dto",
    "time_integration_errors",
    "accumulate_dto_bound_explicit",
    "accumulate_dto_bound_implicit",
    "dto_stability_envelope",
]


@dataclass
class DtoStepRecord:
    k: int
    t: float                       # t_{k+1}
    theta: np.ndarray              # theta_{k+1}
    residual_norm: float           # ||r_k(theta_{k+1})||_M
    gn_iterations: int
    gn_converged: bool
    first_order_violation: float   # ||<grad_theta r, r>_M|| relative to the initial value
    norm_M: float                  # ||u(theta_{k+1})||_M
    residual_history: tuple = ()
    effective_rank: int = 0
    sigma_spectrum: np.ndarray = None
    bound_explicit: float = np.nan
    bound_implicit: float = np.nan
    stability_bound: float = np.nan
    error: float = np.nan


def _check_zeta(zeta):
    if not 0.0 <= zeta <= 1.0:
        raise ConfigurationError(f"zeta must lie in [0, 1], got {zeta}")


def dto_residual(model, theta, theta_k, rhs, t_k, dt, zeta, rule):
    """``u(theta) - u(theta_k) - dt [zeta f(t_k, u_k) + (1 - zeta) f(t_k + dt, u(theta))]``."""
    _check_zeta(zeta)
    x = rule.nodes
    r = model.eval(theta, x) - model.eval(theta_k, x)
    if zeta > 0:
        r = r - dt * zeta * eval_rhs(rhs, t_k, model, theta_k, x)
    if zeta < 1:
        r = r - dt * (1.0 - zeta) * eval_rhs(rhs, t_k + dt, model, theta, x)
    return r


def imex_residual(model, theta, theta_k, rhs, t_k, dt, rule):
    """``u(theta) - u(theta_k) - dt lap u(theta) - dt g(t_k, u(theta_k))``."""
    if rhs.stiff != "laplacian":
        raise ConfigurationError("IMEX stepping needs a right-hand side with a Laplacian part")
    x = rule.nodes
    g = eval_rhs(rhs.bounded_only(), t_k, model, theta_k, x)
    return model.eval(theta, x) - model.eval(theta_k, x) - dt * (model.laplacian(theta, x) + g)


def _solve(model, theta_k, residual, jacobian, rule, k, t_next, L, alpha, line_search, tau, tol,
           start=None):
    if int(L) < 1:
        raise ConfigurationError("L must be at least 1")
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError("step size alpha must lie in (0, 1]")
    theta_k = model.check_theta(theta_k)
    sw = rule.sqrt_weights
    try:
        res = gauss_newton(lambda th: sw * residual(th), lambda th: (jacobian(th) * sw).T,
                           theta_k if start is None else start, max_iter=int(L),
                           alpha=alpha, line_search=line_search, tol=tol, tau=tau)
    except NumericalError as exc:
        raise DivergenceError(f"Gauss-Newton failed at step {k}: {exc}") from exc
    theta = res.x
    record = DtoStepRecord(k, t_next, theta.copy(), res.residual_norm, res.iterations,
                           res.converged, res.violation, norm(rule, model.eval(theta, rule.nodes)),
                           tuple(res.history), res.rank, res.spectrum)
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(f"non-finite parameters after step {k}", record)
    return theta, record


def dto_gauss_newton_solve(model, theta_k, rhs, t_k, dt, zeta, rule, L=1, alpha=1.0,
                           line_search=True, tau=DEFAULT_TAU, *, tol=1e-9, k=0, start=None):
    """Minimize ``||dto_residual||_M`` with at most ``L`` Gauss-Newton iterations.

    The first iterate is ``theta_k`` unless ``start`` is given.  With
    ``L = 1``, ``alpha = 1``, ``zeta = 1`` and no line search this is one
    explicit OtD step.
    """
    _check_zeta(zeta)
    x = rule.nodes
    theta_k = model.check_theta(theta_k)
    u_k = model.eval(theta_k, x)
    frozen = u_k + (dt * zeta * eval_rhs(rhs, t_k, model, theta_k, x) if zeta > 0 else 0.0)
    t_next = t_k + dt

    def residual(th):
        r = model.eval(th, x) - frozen
        if zeta < 1:
            r = r - dt * (1.0 - zeta) * eval_rhs(rhs, t_next, model, th, x)
        return r

    def jacobian(th):
        J = model.grad_theta(th, x)
        if zeta < 1:
            J = J - dt * (1.0 - zeta) * rhs_jacobian(rhs, t_next, model, th, x)
        return J

    return _solve(model, theta_k, residual, jacobian, rule, k, t_next, L, alpha,
                  line_search, tau, tol, start)


def dto_step_imex(model, theta_k, rhs, t_k, dt, rule, L=20, tau=DEFAULT_TAU, *,
                  alpha=1.0, line_search=True, tol=1e-9, k=0):
    """Implicit Laplacian, explicit bounded part; Gauss-Newton with ``L`` iterations.

    ``first_order_violation`` is measured against the residual's own
    Jacobian ``grad u - dt grad lap u``.
    """
    if rhs.stiff != "laplacian":
        raise ConfigurationError("IMEX stepping needs a right-hand side with a Laplacian part")
    x = rule.nodes
    theta_k = model.check_theta(theta_k)
    frozen = model.eval(theta_k, x) + dt * eval_rhs(rhs.bounded_only(), t_k, model, theta_k, x)

    def residual(th):
        return model.eval(th, x) - dt * model.laplacian(th, x) - frozen

    def jacobian(th):
        return model.grad_theta(th, x) - dt * model.grad_theta_laplacian(th, x)

    return _solve(model, theta_k, residual, jacobian, rule, k, t_k + dt, L, alpha,
                  line_search, tau, tol)


def run_dto(model, theta0, rhs, rule, dt, n_steps, *, scheme="gn", zeta=1.0, L=1, alpha=1.0,
            line_search=True, tau=DEFAULT_TAU, tol=1e-9, t0=0.0, blowup=1e8, callback=None):
    """Integrate ``n_steps`` steps; returns one record per step (``theta_1 .. theta_K``)."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    if scheme not in ("gn", "imex"):
        raise ConfigurationError(f"unknown DtO scheme {scheme!r}")
    theta = model.check_theta(np.array(theta0, dtype=float))
    n0 = max(norm(rule, model.eval(theta, rule.nodes)), 1e-300)
    records = []
    for k in range(n_steps):
        t = t0 + k * dt
        try:
            if scheme == "imex":
                theta, rec = dto_step_imex(model, theta, rhs, t, dt, rule, L, tau, alpha=alpha,
                                           line_search=line_search, tol=tol, k=k)
            else:
                theta, rec = dto_gauss_newton_solve(model, theta, rhs, t, dt, zeta, rule, L,
                                                    alpha, line_search, tau, tol=tol, k=k)
        except DivergenceError as exc:
            exc.records = records + ([exc.last_record] if exc.last_record else [])
            raise
        records.append(rec)
        if callback is not None:
            callback(rec)
        if not np.isfinite(rec.norm_M) or rec.norm_M > blowup * n0:
            raise DivergenceError(f"solution norm blew up at step {k + 1}", rec, records)
    return records


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------

def time_integration_errors(reference, rule, times, implicit=False):
    """``||e_k||_M`` from a reference solution at consecutive step times.

    Explicit: ``u(t_{k+1}) - u(t_k) - dt f(t_k, u(t_k))``; implicit evaluates
    ``f`` at ``t_{k+1}``.  ``reference`` must expose ``__call__`` and ``rhs``.
    """
    times = np.asarray(times, dtype=float)
    out = np.empty(times.size - 1)
    u_prev = reference(times[0], rule.nodes)
    for k in range(times.size - 1):
        dt = times[k + 1] - times[k]
        u_next = reference(times[k + 1], rule.nodes)
        f = reference.rhs(times[k + 1] if implicit else times[k], rule.nodes)
        out[k] = norm(rule, u_next - u_prev - dt * f)
        u_prev = u_next
    return out


def _step_inputs(residual_norms, e_norms):
    r = np.asarray(residual_norms, dtype=float)
    e = np.broadcast_to(np.asarray(e_norms, dtype=float), r.shape)
    if np.any(r < 0) or np.any(e < 0):
        raise ConfigurationError("residual and time-integration error norms must be non-negative")
    return r + e


def _geometric(q, drive, e0, lag):
    # B_0 = e0, B_{k+1} = q B_k + q^lag drive_k
    out = np.empty(drive.size + 1)
    out[0] = e0
    w = q**lag
    for k, d in enumerate(drive):
        out[k + 1] = q * out[k] + w * d
    return out


def accumulate_dto_bound_explicit(residual_norms, C, dt, e0, e_norms):
    """``(1 + C dt)^k e0 + sum_{i<k} (1 + C dt)^{k-i-1} (|e_i| + |r_i|)`` for ``k = 0..K``."""
    if C < 0 or dt <= 0:
        raise ConfigurationError("need C >= 0 and dt > 0")
    return _geometric(1.0 + C * dt, _step_inputs(residual_norms, e_norms), float(e0), 0)


def accumulate_dto_bound_implicit(residual_norms, C, lam, dt, e0, e_norms):
    """``q^k e0 + sum_{i<k} q^{k-i} (|r_i| + |e_i|)`` with ``q = 1 / (1 + (lam - C) dt)``."""
    if C < 0 or dt <= 0:
        raise ConfigurationError("need C >= 0 and dt > 0")
    denom = 1.0 + (lam - C) * dt
    if not denom > 0:
        raise ConfigurationError(
            f"1 + (lambda* - C) dt > 0 is violated: 1 + ({lam} - {C}) * {dt} = {denom}")
    return _geometric(1.0 / denom, _step_inputs(residual_norms, e_norms), float(e0), 1)


def dto_stability_envelope(n_steps, norm0, C, C0, dt, eps, model=None):
    """Squared-norm envelope ``a^k |u_0|^2 + (a^k - 1) 2 C0^2 / (2 C^2 + eps^2)``.

    ``a = (1 + 2 C^2 dt / eps) / (1 - eps dt)``.  Compare against squared
    norms.  Passing ``model`` enforces that it lies in its own tangent space.
    """
    if model is not None and not getattr(model, "in_own_tangent_space", False):
        raise ConfigurationError(f"{model!r} does not contain its own values in its tangent space")
    if eps <= 0 or dt <= 0 or C < 0 or C0 < 0:
        raise ConfigurationError("need eps > 0, dt > 0, C >= 0 and C0 >= 0")
    if not 1.0 - eps * dt > 0:
        raise ConfigurationError(f"1 - eps dt > 0 is violated: 1 - {eps} * {dt} = {1 - eps * dt}")
    a = (1.0 + 2.0 * C**2 * dt / eps) / (1.0 - eps * dt)
    with np.errstate(over="ignore"):
        growth = a ** np.arange(int(n_steps) + 1)
        out = growth * norm0**2
        if C0 > 0:
            out = out + (growth - 1.0) * 2.0 * C0**2 / (2.0 * C**2 + eps**2)
    return out
