"""Tangent-space collapse diagnostics.

Duplicate detection groups parameters whose gradient component functions
coincide, and the collapse experiment tracks whether such groups survive
explicit OtD stepping from a symmetric start.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dto import dto_gauss_newton_solve
from .errors import ConfigurationError
from .otd import otd_step_explicit
from .quadrature import DEFAULT_TAU, assemble_gram, norm

__all__ = [
    "CollapseReport",
    "CollapseRun",
    "detect_duplicates",
    "group_spread",
    "collapse_report",
    "run_collapse_experiment",
]


@dataclass
class CollapseReport:
    k: int
    sigma_ratio: float          # sigma_min / sigma_max of P
    effective_rank: int
    n_params: int
    groups: list                # disjoint sorted tuples of parameter indices
    persistent: bool            # step-0 groups still intact
    max_group_spread: float     # max |theta_i - theta_j| over step-0 groups


@dataclass
class CollapseRun:
    reports: list
    thetas: list
    persistent: bool
    first_break: int | None     # first step where a step-0 group split
    rank_constant: bool
    errors: list = field(default_factory=list)

    @property
    def final_error(self):
        return self.errors[-1] if self.errors else np.nan


def detect_duplicates(model, theta, rule, tol=1e-8):
    """Group ``i, j`` when ``|d_i u - d_j u|_M < tol * max(|d_i u|_M, |d_j u|_M)``.

    Groups are the connected components of that relation, so they are
    disjoint.  Singletons are omitted.
    """
    if not 0.0 < tol < 1.0:
        raise ConfigurationError("duplicate tolerance must lie in (0, 1)")
    g = model.grad_theta(theta, rule.nodes) * rule.sqrt_weights
    norms = np.linalg.norm(g, axis=1)
    diff = np.linalg.norm(g[:, None, :] - g[None, :, :], axis=2)
    close = diff < tol * np.maximum(norms[:, None], norms[None, :])
    p = g.shape[0]
    parent = list(range(p))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(np.triu(close, 1))):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    comps = {}
    for i in range(p):
        comps.setdefault(find(i), []).append(i)
    return sorted(tuple(c) for c in comps.values() if len(c) > 1)


def group_spread(theta, groups):
    """Largest coordinate gap within any group."""
    spread = 0.0
    for grp in groups:
        vals = theta[list(grp)]
        spread = max(spread, float(vals.max() - vals.min()))
    return spread


def collapse_report(model, theta, rule, k, base_groups, tau=DEFAULT_TAU, tol=1e-8,
                    spread_tol=1e-10):
    P = assemble_gram(model, theta, rule, tau)
    spread = group_spread(theta, base_groups)
    return CollapseReport(k, P.condition_ratio, P.effective_rank, model.n_params,
                          detect_duplicates(model, theta, rule, tol), spread < spread_tol, spread)


def run_collapse_experiment(model, theta0, rhs, rule, dt, n_steps, tau=DEFAULT_TAU, *,
                            dup_tol=1e-8, spread_tol=1e-10, scheme="otd", L=20,
                            inner_perturbation=0.0, seed=0, reference=None, base_groups=None):
    """Step from ``theta0`` and report collapse diagnostics at every step.

    ``scheme="otd"`` uses explicit OtD with minimal-norm solves.
    ``scheme="dto"`` uses explicit DtO with ``L`` Gauss-Newton iterations whose
    first iterate is ``theta_k`` plus uniform noise of size
    ``inner_perturbation``.  A split group is a finding, so it is reported
    through ``first_break`` rather than raised.  ``base_groups`` defaults to
    the duplicates detected at ``theta0``.
    """
    theta = model.check_theta(np.array(theta0, dtype=float))
    groups = detect_duplicates(model, theta, rule, dup_tol) if base_groups is None else base_groups
    rng = np.random.default_rng(seed)
    reports, thetas, errors = [], [theta.copy()], []
    first_break = None

    def observe(k, th):
        nonlocal first_break
        rep = collapse_report(model, th, rule, k, groups, tau, dup_tol, spread_tol)
        reports.append(rep)
        if not rep.persistent and first_break is None:
            first_break = k
        if reference is not None:
            errors.append(norm(rule, reference(k * dt, rule.nodes) - model.eval(th, rule.nodes)))

    observe(0, theta)
    for k in range(n_steps):
        t = k * dt
        if scheme == "otd":
            theta, _ = otd_step_explicit(model, theta, rhs, t, dt, rule, tau, k=k)
        elif scheme == "dto":
            start = theta + inner_perturbation * rng.uniform(-1.0, 1.0, theta.shape)
            theta, _ = dto_gauss_newton_solve(model, theta, rhs, t, dt, 1.0, rule, L, 1.0,
                                              True, tau, k=k, start=start)
        else:
            raise ConfigurationError(f"unknown collapse scheme {scheme!r}")
        thetas.append(theta.copy())
        observe(k + 1, theta)
    ranks = {r.effective_rank for r in reports}
    return CollapseRun(reports, thetas, first_break is None, first_break, len(ranks) == 1,
                       errors)
