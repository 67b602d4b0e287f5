"""Discrete inner products, Gram assembly and minimal-norm solvers.

The inner product <f, g>_M is realized by a quadrature rule,
``sum_q w_q f(x_q) g(x_q)``.  Least-squares problems in that inner product are
solved on the square-root-weighted sample matrix, which avoids squaring the
condition number the way the normal equations do.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, NumericalError

__all__ = [
    "QuadratureRule",
    "gauss_legendre",
    "trapezoid",
    "monte_carlo",
    "make_rule",
    "inner",
    "norm",
    "GramMatrix",
    "assemble_gram",
    "assemble_moment",
    "MinNormSolution",
    "solve_min_norm",
    "solve_least_squares",
    "effective_rank",
]

DEFAULT_TAU = 1e-10


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes ``(n, d)`` and positive weights ``(n,)`` on a box domain."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    lower: tuple = field(default=())
    upper: tuple = field(default=())

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape[0] < 1 or weights.shape != (nodes.shape[0],):
            raise ConfigurationError("quadrature needs at least one node and one weight per node")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ConfigurationError("quadrature weights must be positive and finite")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n_nodes(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.nodes.shape[1]

    @cached_property
    def sqrt_weights(self):
        return np.sqrt(self.weights)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.upper, self.lower)))


def _box(lower, upper):
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ConfigurationError("box bounds must satisfy lower < upper per axis")
    return lo, hi


def _tensor(points_1d, weights_1d):
    grids = np.meshgrid(*points_1d, indexing="ij")
    wgrids = np.meshgrid(*weights_1d, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
    return nodes, weights


def gauss_legendre(lower, upper, n_per_dim):
    """Tensor Gauss-Legendre rule with ``n_per_dim`` nodes along each axis."""
    lo, hi = _box(lower, upper)
    if int(n_per_dim) < 1:
        raise ConfigurationError("n_per_dim must be positive")
    t, w = np.polynomial.legendre.leggauss(int(n_per_dim))
    pts = [0.5 * (b - a) * (t + 1.0) + a for a, b in zip(lo, hi)]
    wts = [0.5 * (b - a) * w for a, b in zip(lo, hi)]
    nodes, weights = _tensor(pts, wts)
    return QuadratureRule(nodes, weights, "gauss-legendre", tuple(lo), tuple(hi))


def trapezoid(lower, upper, n_per_dim):
    """Composite trapezoid rule on a uniform grid including the boundary."""
    lo, hi = _box(lower, upper)
    n = int(n_per_dim)
    if n < 2:
        raise ConfigurationError("trapezoid rule needs at least 2 nodes per axis")
    pts, wts = [], []
    for a, b in zip(lo, hi):
        x = np.linspace(a, b, n)
        w = np.full(n, (b - a) / (n - 1))
        w[[0, -1]] *= 0.5
        pts.append(x)
        wts.append(w)
    nodes, weights = _tensor(pts, wts)
    return QuadratureRule(nodes, weights, "uniform-trapezoid", tuple(lo), tuple(hi))


def monte_carlo(lower, upper, n_nodes, seed=0):
    """Uniform random nodes with equal weights ``|Omega| / n``."""
    lo, hi = _box(lower, upper)
    n = int(n_nodes)
    if n < 1:
        raise ConfigurationError("n_nodes must be positive")
    rng = np.random.default_rng(seed)
    nodes = lo + (hi - lo) * rng.random((n, lo.size))
    weights = np.full(n, np.prod(hi - lo) / n)
    return QuadratureRule(nodes, weights, f"monte-carlo({seed})", tuple(lo), tuple(hi))


def make_rule(kind, lower, upper, n, seed=0):
    """Build a rule from a config-style ``kind`` string."""
    if kind in ("gauss-legendre", "tensor-gauss-legendre"):
        return gauss_legendre(lower, upper, n)
    if kind in ("trapezoid", "uniform-trapezoid"):
        return trapezoid(lower, upper, n)
    if kind in ("monte-carlo", "monte_carlo"):
        return monte_carlo(lower, upper, n, seed)
    raise ConfigurationError(f"unknown quadrature kind {kind!r}")


def _node_vector(rule, values, name):
    values = np.asarray(values, dtype=float)
    if values.shape[-1:] != (rule.n_nodes,):
        raise ConfigurationError(
            f"{name} has {values.shape[-1] if values.ndim else 0} entries, "
            f"rule has {rule.n_nodes} nodes")
    return values


def inner(rule, fvals, gvals):
    """``sum_q w_q f(x_q) g(x_q)``; batched over leading axes."""
    f = _node_vector(rule, fvals, "fvals")
    g = _node_vector(rule, gvals, "gvals")
    return np.sum(rule.weights * f * g, axis=-1)


def norm(rule, fvals):
    return float(np.sqrt(max(inner(rule, fvals, fvals), 0.0)))


def effective_rank(spectrum, tau):
    """Count singular values at or above ``tau * max``."""
    spectrum = np.asarray(spectrum)
    if spectrum.size == 0 or spectrum[0] <= 0:
        return 0
    return int(np.count_nonzero(spectrum >= tau * spectrum[0]))


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric ``P(theta) = <grad u, grad u>_M``."""

    entries: np.ndarray
    tau: float = DEFAULT_TAU

    @cached_property
    def singular_values(self):
        return np.linalg.svd(self.entries, compute_uv=False, hermitian=True)

    @property
    def effective_rank(self):
        return effective_rank(self.singular_values, self.tau)

    @property
    def condition_ratio(self):
        s = self.singular_values
        return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def _check_finite(arr, what):
    bad = ~np.isfinite(arr)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericalError(f"non-finite {what} at index {idx}", index=idx)


def assemble_gram(model, theta, rule, tau=DEFAULT_TAU):
    g = model.grad_theta(theta, rule.nodes)
    _check_finite(g, "parameter gradient")
    gw = g * rule.sqrt_weights
    return GramMatrix(gw @ gw.T, tau)


def assemble_moment(model, theta, rhs_vals, rule):
    rhs = _node_vector(rule, rhs_vals, "rhs_vals")
    _check_finite(rhs, "right-hand side")
    g = model.grad_theta(theta, rule.nodes)
    _check_finite(g, "parameter gradient")
    return g @ (rule.weights * rhs)


class MinNormSolution(NamedTuple):
    x: np.ndarray
    rank: int
    spectrum: np.ndarray  # singular values of the Gram matrix, descending
    residual_norm: float


def solve_min_norm(P, b, tau=DEFAULT_TAU):
    """Minimal-norm solution of ``P x = b`` with relative SVD truncation.

    Singular values below ``tau * sigma_max`` are discarded.  ``P`` may be a
    :class:`GramMatrix` or a plain square array.
    """
    mat = P.entries if isinstance(P, GramMatrix) else np.asarray(P, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_finite(b, "right-hand side")
    if tau < 0:
        raise ConfigurationError("tau must be non-negative")
    u, s, vt = np.linalg.svd(mat)
    rank = effective_rank(s, tau) if tau > 0 else int(np.count_nonzero(s))
    rank = min(rank, int(np.count_nonzero(s > 0)))
    coef = (u[:, :rank].T @ b) / s[:rank]
    x = vt[:rank].T @ coef
    return MinNormSolution(x, rank, s, float(np.linalg.norm(mat @ x - b)))


def solve_least_squares(J, r, tau=DEFAULT_TAU):
    """Minimal-norm solution of ``min ||J x - r||_2``.

    ``J`` holds square-root-weighted gradient samples (nodes by parameters) and
    ``r`` the square-root-weighted targets, so the Gram matrix is ``J^T J``.
    The truncation threshold ``tau`` refers to that Gram spectrum: singular
    values ``s`` of ``J`` are kept when ``s^2 >= tau * s_max^2``.  The returned
    ``spectrum`` is ``s^2``.
    """
    J = np.asarray(J, dtype=float)
    r = np.asarray(r, dtype=float)
    _check_finite(r, "right-hand side")
    _check_finite(J, "sample matrix")
    if tau < 0:
        raise ConfigurationError("tau must be non-negative")
    u, s, vt = np.linalg.svd(J, full_matrices=False)
    gram_spectrum = s**2
    rank = effective_rank(gram_spectrum, tau) if tau > 0 else int(np.count_nonzero(s))
    rank = min(rank, int(np.count_nonzero(s > 0)))
    coef = (u[:, :rank].T @ r) / s[:rank]
    x = vt[:rank].T @ coef
    return MinNormSolution(x, rank, gram_spectrum, float(np.linalg.norm(J @ x - r)))
