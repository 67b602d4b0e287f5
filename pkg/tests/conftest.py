"""Shared fixtures and finite-difference oracles."""
import numpy as np
import pytest

from seqtrain.models import BoundaryMask, GaussianMixtureModel, MaskedModel
from seqtrain.otd import fit_initial
from seqtrain.pde import SineSeries, heat_operator, smallest_dirichlet_eigenvalue
from seqtrain.quadrature import gauss_legendre


def central_diff(fun, theta, h=1e-6):
    """Columns of d fun / d theta_i by central differences, stacked on axis 0."""
    theta = np.asarray(theta, dtype=float)
    rows = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        rows.append((fun(theta + e) - fun(theta - e)) / (2 * h))
    return np.stack(rows)


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


class HeatSetup:
    """Masked six-kernel mixture fitted to a two-mode sine series on [0, 1]."""

    def __init__(self):
        self.rule = gauss_legendre([0.0], [1.0], 64)
        self.model = MaskedModel(GaussianMixtureModel(6, 0.15),
                                 BoundaryMask("homogeneous-dirichlet", (0.0,), (1.0,)))
        self.u0 = SineSeries(((1, 1.0), (3, 0.5)), (0.0,), (1.0,))
        self.rhs = heat_operator(-1.0)
        self.C = 1.0
        self.lam = smallest_dirichlet_eigenvalue((0.0,), (1.0,))
        self.theta0, self.e0 = fit_initial(self.model, self.u0(self.rule.nodes), self.rule, seed=2)


@pytest.fixture(scope="session")
def heat():
    return HeatSetup()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
