"""Right-hand sides ``f(t, x, u)`` and reference solutions.

A :class:`RhsOperator` is an optional stiff Laplacian plus a sum of bounded
terms.  Each term knows how to evaluate itself on a parametrized field and how
to differentiate that value with respect to the parameters, which the
implicit steppers need for their Gauss-Newton Jacobians.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import ConfigurationError, NumericalError
from .models import as_points

__all__ = [
    "LinearReaction",
    "Advection",
    "RhsOperator",
    "eval_rhs",
    "rhs_jacobian",
    "heat_operator",
    "advection_operator",
    "smallest_dirichlet_eigenvalue",
    "ReferenceSolution",
    "SineSeries",
    "GaussianBump",
    "sine_series_heat_solution",
    "advection_solution",
    "reference_heat_solver",
    "check_reference_residual",
]


# ---------------------------------------------------------------------------
# bounded terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearReaction:
    """``g(u) = c * u``."""

    coefficient: float

    def evaluate(self, t, model, theta, x):
        return self.coefficient * model.eval(theta, x)

    def jacobian(self, t, model, theta, x):
        return self.coefficient * model.grad_theta(theta, x)

    def on_values(self, t, x, u):
        return self.coefficient * u


@dataclass(frozen=True)
class Advection:
    """``g(t, u) = grad_x u . w(t)`` with ``w(t) = velocity + acceleration * t``.

    The solution of ``du/dt = grad u . w(t)`` is ``u0(x + W(t))`` where
    ``W(t) = velocity * t + acceleration * t^2 / 2``.
    """

    velocity: tuple
    acceleration: tuple = None

    def __post_init__(self):
        w0 = tuple(float(v) for v in np.atleast_1d(self.velocity))
        w1 = self.acceleration
        w1 = tuple(0.0 for _ in w0) if w1 is None else tuple(float(v) for v in np.atleast_1d(w1))
        if len(w1) != len(w0):
            raise ConfigurationError("velocity and acceleration dimensions differ")
        object.__setattr__(self, "velocity", w0)
        object.__setattr__(self, "acceleration", w1)

    def w(self, t):
        return np.asarray(self.velocity) + np.asarray(self.acceleration) * t

    def displacement(self, t):
        return np.asarray(self.velocity) * t + 0.5 * np.asarray(self.acceleration) * t**2

    def evaluate(self, t, model, theta, x):
        return self.w(t) @ model.grad_x(theta, x)

    def jacobian(self, t, model, theta, x):
        return np.einsum("pdn,d->pn", model.grad_theta_grad_x(theta, x), self.w(t))


# ---------------------------------------------------------------------------
# operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RhsOperator:
    """``f(t, x, u) = [laplacian u] + sum(terms)``.

    ``lipschitz`` (C) and ``affine`` (C0) are user-declared constants used by
    the bound trackers; nothing here estimates them.
    """

    stiff: str = "none"
    terms: tuple = ()
    lipschitz: float = 0.0
    affine: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.stiff not in ("none", "laplacian"):
            raise ConfigurationError(f"unknown stiff part {self.stiff!r}")
        object.__setattr__(self, "terms", tuple(self.terms))

    def stiff_only(self):
        return RhsOperator(self.stiff, (), self.lipschitz, self.affine, self.name)

    def bounded_only(self):
        return RhsOperator("none", self.terms, self.lipschitz, self.affine, self.name)

    @property
    def is_zero(self):
        return self.stiff == "none" and not self.terms


def _require(model, method):
    try:
        return getattr(model, method)
    except AttributeError as exc:  # pragma: no cover - all bundled models have it
        raise ConfigurationError(f"{model!r} cannot supply {method}") from exc


def eval_rhs(op, t, model, theta, x):
    """``f(t, x_q, u(theta, .))`` at every point."""
    pts = as_points(x, model.dim)
    out = np.zeros(pts.shape[0])
    try:
        if op.stiff == "laplacian":
            out = out + _require(model, "laplacian")(theta, pts)
        for term in op.terms:
            out = out + term.evaluate(t, model, theta, pts)
    except NotImplementedError as exc:
        raise ConfigurationError(f"{model!r} cannot supply derivatives needed by the rhs") from exc
    return out


def rhs_jacobian(op, t, model, theta, x):
    """Parameter derivative of :func:`eval_rhs`, shape ``(p, n)``."""
    pts = as_points(x, model.dim)
    out = np.zeros((model.n_params, pts.shape[0]))
    try:
        if op.stiff == "laplacian":
            out = out + model.grad_theta_laplacian(theta, pts)
        for term in op.terms:
            out = out + term.jacobian(t, model, theta, pts)
    except NotImplementedError as exc:
        raise ConfigurationError(f"{model!r} cannot supply derivatives needed by the rhs") from exc
    return out


def heat_operator(reaction=0.0, lipschitz=None, affine=0.0):
    """Heat equation with optional linear reaction ``c * u``."""
    terms = (LinearReaction(reaction),) if reaction != 0.0 else ()
    C = abs(reaction) if lipschitz is None else lipschitz
    return RhsOperator("laplacian", terms, C, affine, "heat")


def advection_operator(velocity, acceleration=None, lipschitz=0.0, affine=0.0):
    return RhsOperator("none", (Advection(velocity, acceleration),), lipschitz, affine,
                       "advection")


def smallest_dirichlet_eigenvalue(lower, upper):
    """Smallest eigenvalue of ``-laplacian`` with Dirichlet data on a box."""
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ConfigurationError("box bounds must satisfy lower < upper per axis")
    return float(np.sum((np.pi / (hi - lo)) ** 2))


# ---------------------------------------------------------------------------
# initial conditions with closed-form derivatives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SineSeries:
    """``sum_j a_j prod_k sin(m_j pi (x_k - lo_k) / L_k)`` on a box."""

    modes: tuple            # ((m, amplitude), ...)
    lower: tuple
    upper: tuple

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple((int(m), float(a)) for m, a in self.modes))
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))

    @property
    def dim(self):
        return len(self.lower)

    def eigenvalue(self, m):
        L = np.subtract(self.upper, self.lower)
        return float(np.sum((m * np.pi / L) ** 2))

    def __call__(self, x, decay=None):
        pts = as_points(x, self.dim)
        t = (pts - np.asarray(self.lower)) / np.subtract(self.upper, self.lower)
        out = np.zeros(pts.shape[0])
        for m, amp in self.modes:
            factor = 1.0 if decay is None else decay(m)
            out += amp * factor * np.prod(np.sin(m * np.pi * t), axis=1)
        return out


@dataclass(frozen=True)
class GaussianBump:
    """``amplitude * exp(-|x - center|^2 / (2 width^2))``."""

    center: tuple
    width: float
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))

    @property
    def dim(self):
        return len(self.center)

    def __call__(self, x):
        pts = as_points(x, self.dim)
        d = pts - np.asarray(self.center)
        return self.amplitude * np.exp(-0.5 * np.sum(d**2, axis=1) / self.width**2)

    def gradient(self, x):
        pts = as_points(x, self.dim)
        d = pts - np.asarray(self.center)
        return -(self(pts) / self.width**2)[None, :] * d.T


# ---------------------------------------------------------------------------
# reference solutions
# ---------------------------------------------------------------------------

@dataclass
class ReferenceSolution:
    """``u(t, x)`` plus ``f(t, x, u(t, .))`` for the time-integration error terms."""

    kind: str                       # "analytic" or "fine-grid"
    evaluator: object
    rhs_evaluator: object = None
    metadata: dict = field(default_factory=dict)

    def __call__(self, t, points):
        return self.evaluator(t, points)

    def rhs(self, t, points):
        if self.rhs_evaluator is None:
            raise ConfigurationError("this reference solution has no rhs evaluator")
        return self.rhs_evaluator(t, points)


def sine_series_heat_solution(initial, reaction=0.0):
    """Closed form for ``u_t = laplacian u + c u`` from a :class:`SineSeries`."""

    def decay_at(t):
        return lambda m: np.exp((reaction - initial.eigenvalue(m)) * t)

    def evaluator(t, points):
        return initial(points, decay_at(t))

    def rhs(t, points):
        return initial(points, lambda m: (reaction - initial.eigenvalue(m))
                       * np.exp((reaction - initial.eigenvalue(m)) * t))

    return ReferenceSolution("analytic", evaluator, rhs,
                             {"formula": "sine-series-heat", "reaction": reaction})


def advection_solution(initial, advection):
    """Transport ``u(t, x) = u0(x + W(t))`` for :class:`Advection` terms."""

    def evaluator(t, points):
        pts = as_points(points, initial.dim)
        return initial(pts + advection.displacement(t))

    def rhs(t, points):
        pts = as_points(points, initial.dim)
        return advection.w(t) @ initial.gradient(pts + advection.displacement(t))

    return ReferenceSolution("analytic", evaluator, rhs, {"formula": "transport"})


def _laplacian_matrix(n, h):
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csc") / h**2


def reference_heat_solver(initial, lower, upper, t_final, n=512, dt_ref=1e-4,
                          reaction=0.0, method="crank-nicolson", save_times=None):
    """Finite-difference solve of ``u_t = laplacian u + c u`` with zero Dirichlet data.

    Second-order central differences on ``n`` interior points per axis and
    implicit Euler or Crank-Nicolson in time.  Snapshots are kept at
    ``save_times`` (defaulting to every ``dt_ref``), which must be multiples of
    ``dt_ref``.  Values between grid points use cubic splines; between
    snapshots, linear interpolation in time.

    ``initial`` is a callable on points or an array of interior grid values.
    """
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    dim = lo.size
    if dim not in (1, 2):
        raise ConfigurationError("reference solver supports d = 1 or 2")
    if dim == 1 and n < 256:
        raise ConfigurationError("reference grid needs n >= 256 in one dimension")
    if method not in ("implicit-euler", "crank-nicolson"):
        raise ConfigurationError(f"unknown time integrator {method!r}")
    axes = [np.linspace(a, b, n + 2) for a, b in zip(lo, hi)]
    hs = [(b - a) / (n + 1) for a, b in zip(lo, hi)]
    interior = [ax[1:-1] for ax in axes]
    if dim == 1:
        pts = interior[0][:, None]
        lap = _laplacian_matrix(n, hs[0])
    else:
        gx, gy = np.meshgrid(*interior, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        eye = sp.identity(n, format="csc")
        lap = (sp.kron(_laplacian_matrix(n, hs[0]), eye)
               + sp.kron(eye, _laplacian_matrix(n, hs[1]))).tocsc()
    A = lap + reaction * sp.identity(lap.shape[0], format="csc")
    U = np.asarray(initial(pts) if callable(initial) else initial, dtype=float).ravel()
    if U.shape != (pts.shape[0],):
        raise ConfigurationError("initial grid values have the wrong size")

    n_steps = int(round(t_final / dt_ref))
    if n_steps < 1 or abs(n_steps * dt_ref - t_final) > 1e-9 * max(1.0, t_final):
        raise ConfigurationError("t_final must be a positive multiple of dt_ref")
    if save_times is None:
        save_steps = set(range(n_steps + 1))
    else:
        save_steps = set()
        for ts in np.atleast_1d(save_times):
            k = int(round(ts / dt_ref))
            if abs(k * dt_ref - ts) > 1e-9 * max(1.0, abs(ts)) or not 0 <= k <= n_steps:
                raise ConfigurationError(f"save time {ts} is not a multiple of dt_ref in [0, T]")
            save_steps.add(k)
    ident = sp.identity(A.shape[0], format="csc")
    if method == "implicit-euler":
        lhs = spla.splu((ident - dt_ref * A).tocsc())
        rhs_mat = ident
    else:
        lhs = spla.splu((ident - 0.5 * dt_ref * A).tocsc())
        rhs_mat = (ident + 0.5 * dt_ref * A).tocsr()
    scale = max(1.0, float(np.max(np.abs(U))))
    snaps = {}
    for k in range(n_steps + 1):
        if k in save_steps:
            snaps[k] = (U.copy(), A @ U)
        if k == n_steps:
            break
        U = lhs.solve(rhs_mat @ U)
        if not np.all(np.isfinite(U)) or np.max(np.abs(U)) > 1e6 * scale:
            raise NumericalError(f"reference solution blew up at step {k + 1}")

    steps = np.array(sorted(snaps))
    times = steps * dt_ref

    def _interp(vals):
        if dim == 1:
            full = np.concatenate([[0.0], vals, [0.0]])
            return CubicSpline(axes[0], full)
        full = np.zeros((n + 2, n + 2))
        full[1:-1, 1:-1] = vals.reshape(n, n)
        return RectBivariateSpline(axes[0], axes[1], full, kx=3, ky=3)

    splines = {int(k): (_interp(snaps[k][0]), _interp(snaps[k][1])) for k in steps}

    def _at(which, t, points):
        p = as_points(points, dim)
        pos = t / dt_ref
        j = int(np.searchsorted(steps, pos - 1e-7))
        if j < len(steps) and abs(steps[j] - pos) < 1e-7:
            lo_k, hi_k, frac = steps[j], steps[j], 0.0
        elif 0 < j < len(steps):
            lo_k, hi_k = steps[j - 1], steps[j]
            frac = (pos - lo_k) / (hi_k - lo_k)
        else:
            raise ConfigurationError(f"time {t} outside the stored reference window")

        def ev(k):
            s = splines[int(k)][which]
            return s(p[:, 0]) if dim == 1 else s.ev(p[:, 0], p[:, 1])

        out = ev(lo_k)
        if frac:
            out = (1.0 - frac) * out + frac * ev(hi_k)
        return out

    meta = {"n": n, "dt_ref": dt_ref, "method": method, "reaction": reaction,
            "lower": lo.tolist(), "upper": hi.tolist(), "t_final": t_final,
            "times": times.tolist()}
    return ReferenceSolution("fine-grid", lambda t, p: _at(0, t, p),
                             lambda t, p: _at(1, t, p), meta)


def check_reference_residual(ref, op_time_derivative, samples, h=1e-5):
    """Max PDE residual of an analytic reference at random ``(t, x)`` samples.

    ``op_time_derivative(t, x)`` must return ``f(t, x, u(t, .))``; the time
    derivative is taken by central differences of the reference itself.
    """
    worst = 0.0
    for t, x in samples:
        dudt = (ref(t + h, x) - ref(t - h, x)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(dudt - op_time_derivative(t, x)))))
    return worst
