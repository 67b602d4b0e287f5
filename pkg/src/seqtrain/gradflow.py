"""L2 gradient flows and natural gradient descent.

For ``E(v) = 0.5 ||v - g||_M^2`` the flow ``du/dt = -(u - g)`` is an ordinary
right-hand side, and an explicit OtD step on it coincides with a gradient
step preconditioned by the pseudo-inverse of the Gram matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .pde import RhsOperator
from .quadrature import DEFAULT_TAU, assemble_gram, assemble_moment, inner, solve_min_norm

__all__ = [
    "TARGETS",
    "EnergyFunctional",
    "GradientFlowTerm",
    "gradient_flow_rhs",
    "gradient_flow_operator",
    "loss",
    "loss_gradient",
    "natural_gradient_step",
]


def _bump(x):
    return np.exp(-np.sum((x - 0.5) ** 2, axis=1) / (2 * 0.15**2))


def _two_bumps(x):
    return (np.exp(-np.sum((x - 0.3) ** 2, axis=1) / (2 * 0.1**2))
            - 0.5 * np.exp(-np.sum((x - 0.7) ** 2, axis=1) / (2 * 0.1**2)))


def _sine(x):
    return np.prod(np.sin(np.pi * x), axis=1)


TARGETS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "bump": _bump,
    "two-bumps": _two_bumps,
    "sine": _sine,
    "zero": lambda x: np.zeros(x.shape[0]),
}


@dataclass(frozen=True)
class EnergyFunctional:
    """``E(v) = 0.5 ||v - g||_M^2`` with ``g`` from :data:`TARGETS` or a callable."""

    target: object = "bump"
    kind: str = "l2-least-squares"

    def __post_init__(self):
        if self.kind != "l2-least-squares":
            raise ConfigurationError(f"unsupported energy kind {self.kind!r}")
        if isinstance(self.target, str) and self.target not in TARGETS:
            raise ConfigurationError(
                f"unknown target {self.target!r}; known: {sorted(TARGETS)}")

    def target_values(self, x):
        fn = TARGETS[self.target] if isinstance(self.target, str) else self.target
        return np.asarray(fn(np.asarray(x, dtype=float)), dtype=float)

    def function_gradient(self, model, theta, x):
        """``grad_u E`` at ``u(theta)``, i.e. ``u - g`` pointwise."""
        return model.eval(theta, x) - self.target_values(x)


@dataclass(frozen=True)
class GradientFlowTerm:
    """Bounded rhs term ``-grad_u E(u)``; plugs into :class:`RhsOperator`."""

    energy: EnergyFunctional

    def evaluate(self, t, model, theta, x):
        return -self.energy.function_gradient(model, theta, x)

    def jacobian(self, t, model, theta, x):
        return -model.grad_theta(theta, x)


def gradient_flow_operator(energy):
    # E is 1-Lipschitz in v and |g - v| <= |v| + |g|
    return RhsOperator("none", (GradientFlowTerm(energy),), 1.0, 0.0, "gradient-flow")


def gradient_flow_rhs(energy, model, theta, rule):
    return GradientFlowTerm(energy).evaluate(0.0, model, theta, rule.nodes)


def loss(energy, model, theta, rule):
    d = energy.function_gradient(model, theta, rule.nodes)
    return 0.5 * float(inner(rule, d, d))


def loss_gradient(energy, model, theta, rule):
    """``<grad_theta u, u - g>_M``."""
    return assemble_moment(model, theta, energy.function_gradient(model, theta, rule.nodes), rule)


def natural_gradient_step(model, theta, energy, dt, rule, tau=DEFAULT_TAU, metric_rule=None):
    """``theta - dt P(theta)^+ grad L(theta)``.

    ``metric_rule`` assembles ``P`` with a different quadrature than the one
    defining the loss; by default both use ``rule``.
    """
    theta = model.check_theta(theta)
    P = assemble_gram(model, theta, rule if metric_rule is None else metric_rule, tau)
    sol = solve_min_norm(P, loss_gradient(energy, model, theta, rule), tau)
    return theta - dt * sol.x
