"""Experiment execution: build problems from configs, run schemes, write artifacts.

Every run directory holds ``steps.csv`` (one row per recorded state),
``spectra.csv`` (Gram spectra at the configured stride) and ``summary.json``.
Floats are written with 17 significant digits so values round-trip exactly.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, ExperimentConfig
from .diagnostics import detect_duplicates, group_spread
from .dto import (accumulate_dto_bound_explicit, accumulate_dto_bound_implicit,
                  dto_gauss_newton_solve, dto_stability_envelope, dto_step_imex,
                  time_integration_errors)
from .errors import ConfigurationError, DivergenceError
from .gradflow import EnergyFunctional, gradient_flow_operator, loss, natural_gradient_step
from .models import BoundaryMask, GaussianMixtureModel, MaskedModel, ShallowNetworkModel
from .otd import (accumulate_bound_laplacian, accumulate_bound_lipschitz, fit_initial,
                  otd_step_explicit, otd_step_zeta, stability_envelope)
from .pde import (Advection, GaussianBump, ReferenceSolution, RhsOperator, SineSeries,
                  advection_solution, heat_operator, reference_heat_solver,
                  sine_series_heat_solution, smallest_dirichlet_eigenvalue)
from .quadrature import assemble_gram, make_rule, norm

__all__ = ["Problem", "RunResult", "build_problem", "execute", "run", "sweep", "compare",
           "output_root", "OUTPUT_ENV", "STEP_COLUMNS"]

log = logging.getLogger(__name__)

OUTPUT_ENV = "SEQTRAIN_OUTPUT_ROOT"
BOUND_SLACK = 1e-12   # relative round-off allowance when judging a margin

STEP_COLUMNS = [
    "k", "t", "norm_M", "error", "epsilon", "residual_norm", "gn_iterations", "gn_converged",
    "first_order_violation", "inner_iterations", "inner_converged", "effective_rank",
    "sigma_ratio", "loss", "bound_lipschitz", "bound_laplacian", "bound_explicit",
    "bound_implicit", "stability_bound", "stability_bound_sq", "group_spread",
]


def output_root():
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


# ---------------------------------------------------------------------------
# problem construction
# ---------------------------------------------------------------------------

@dataclass
class Problem:
    model: object
    rhs: RhsOperator
    rule: object
    theta0: np.ndarray
    e0: float
    reference: ReferenceSolution | None
    lam: float | None
    C: float
    C0: float
    energy: EnergyFunctional | None = None
    metric_rule: object = None
    base_groups: list | None = None
    notes: dict = field(default_factory=dict)


def _model(cfg, default_mask, lower, upper):
    m = cfg["model"]
    if m["kind"] == "gaussian-mixture":
        base = GaussianMixtureModel(m["n_kernels"], m["bandwidth"], 1, m["trainable_bandwidth"])
    else:
        base = ShallowNetworkModel(m["n_kernels"], 1)
    mask = m["mask"] or default_mask
    if mask == "none":
        return base
    return MaskedModel(base, BoundaryMask(mask, lower, upper))


def _fine_grid(cfg, initial, lower, upper, reaction):
    dt, T = cfg["dt"], cfg["T"]
    r = cfg["reference"]
    sub = max(1, int(math.ceil(dt / r["dt_ref"] - 1e-9)))
    times = dt * np.arange(cfg.n_steps + 1)
    return reference_heat_solver(initial, lower, upper, T, n=r["n"], dt_ref=dt / sub,
                                 reaction=reaction, save_times=times)


def build_problem(cfg: ExperimentConfig) -> Problem:
    p = cfg["problem"]
    pid = p["id"]
    lower, upper = p["lower"], p["upper"]
    q = cfg["quadrature"]
    rule = make_rule(q["kind"], lower, upper, q["n"], q["seed"])
    const = cfg["constants"]
    ref_kind = cfg["reference"]["kind"]
    lam = const["lambda_star"]

    if pid == "P1":
        model = _model(cfg, "none", lower, upper)
        adv = Advection((p["velocity"],), (p["acceleration"],))
        rhs = RhsOperator("none", (adv,), 0.0, 0.0, "advection")
        u0 = GaussianBump((p["center"],), p["width"], p["amplitude"])
        theta0, e0 = fit_initial(model, u0(rule.nodes), rule, seed=cfg["seed"])
        reference = None if ref_kind == "none" else advection_solution(u0, adv)
        C = 0.0 if const["C"] is None else const["C"]
        lam = None
    elif pid == "P2":
        model = _model(cfg, "homogeneous-dirichlet", lower, upper)
        rhs = heat_operator(p["reaction"])
        u0 = SineSeries(tuple(tuple(mv) for mv in p["modes"]), lower, upper)
        theta0, e0 = fit_initial(model, u0(rule.nodes), rule, seed=cfg["seed"])
        if ref_kind in ("auto", "fine-grid"):
            reference = _fine_grid(cfg, u0, lower, upper, p["reaction"])
        elif ref_kind == "analytic":
            reference = sine_series_heat_solution(u0, p["reaction"])
        else:
            reference = None
        C = abs(p["reaction"]) if const["C"] is None else const["C"]
        lam = smallest_dirichlet_eigenvalue(lower, upper) if lam is None else lam
    elif pid == "P3":
        model = _model(cfg, "none", lower, upper)
        energy = EnergyFunctional(p["target"])
        rhs = gradient_flow_operator(energy)
        theta0 = model.random_params(np.random.default_rng(cfg["seed"]))
        e0 = 0.0
        g = energy.target_values
        u_start = lambda pts: model.eval(theta0, pts)   # noqa: E731

        def evaluator(t, pts):
            return g(pts) + (u_start(pts) - g(pts)) * np.exp(-t)

        def rhs_eval(t, pts):
            return -(u_start(pts) - g(pts)) * np.exp(-t)

        reference = None if ref_kind == "none" else ReferenceSolution(
            "analytic", evaluator, rhs_eval, {"formula": "relaxation"})
        C = 1.0 if const["C"] is None else const["C"]
        metric_rule = None
        if p["metric_quadrature_n"] is not None:
            metric_rule = make_rule(q["kind"], lower, upper, int(p["metric_quadrature_n"]),
                                    q["seed"])
        return Problem(model, rhs, rule, theta0, e0, reference, None, C, const["C0"],
                       energy, metric_rule)
    else:  # collapse
        model = _model(cfg, "homogeneous-dirichlet", lower, upper)
        if not isinstance(getattr(model, "base", model), GaussianMixtureModel):
            raise ConfigurationError("config field 'model.kind': collapse needs gaussian-mixture")
        n = cfg["model"]["n_kernels"]
        degenerate = model.pack(np.full((n, 1), p["center"]), np.full(n, p["weight"] / n))
        base_groups = detect_duplicates(model, degenerate, rule, cfg["diagnostics"]["duplicate_tol"])
        theta0 = degenerate.copy()
        theta0[model.center_index(0)] += p["perturbation"]
        if p["rhs"] == "heat":
            rhs = heat_operator(p["reaction"])
            reference = None
            if ref_kind != "none":
                reference = _fine_grid(cfg, lambda pts: model.eval(degenerate, pts), lower,
                                       upper, p["reaction"])
            lam = smallest_dirichlet_eigenvalue(lower, upper) if lam is None else lam
            C = abs(p["reaction"]) if const["C"] is None else const["C"]
        elif p["rhs"] == "advection":
            rhs = RhsOperator("none", (Advection((p["velocity"],)),), 0.0, 0.0, "advection")
            reference, lam, C = None, None, 0.0 if const["C"] is None else const["C"]
        else:
            raise ConfigurationError("config field 'problem.rhs' must be 'heat' or 'advection'")
        e0 = 0.0
        if reference is not None:
            e0 = norm(rule, reference(0.0, rule.nodes) - model.eval(theta0, rule.nodes))
        return Problem(model, rhs, rule, theta0, e0, reference, lam, C, const["C0"],
                       base_groups=base_groups)
    if reference is not None:
        e0 = norm(rule, reference(0.0, rule.nodes) - model.eval(theta0, rule.nodes))
    return Problem(model, rhs, rule, theta0, e0, reference, lam, C, const["C0"])


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: ExperimentConfig
    problem: Problem
    rows: list                  # dicts keyed by STEP_COLUMNS
    thetas: list
    spectra: list               # (k, spectrum)
    summary: dict
    diverged: bool = False
    message: str = ""

    @property
    def valid(self):
        return self.summary.get("valid", True)


def _blank_row(k, t):
    row = {c: np.nan for c in STEP_COLUMNS}
    row.update(k=k, t=t, gn_iterations=0, gn_converged=True, inner_iterations=0,
               inner_converged=True, effective_rank=-1)
    return row


def _integrate(cfg, prob):
    """Run the configured scheme; returns rows, thetas, spectra and a divergence note."""
    s = cfg["scheme"]
    kind = s["kind"]
    dt, K, tau = cfg["dt"], cfg.n_steps, cfg["tau"]
    model, rhs, rule = prob.model, prob.rhs, prob.rule
    stride = cfg["diagnostics"]["spectra_stride"]
    rng = np.random.default_rng(cfg["seed"])
    theta = prob.theta0.copy()
    rows, thetas, spectra = [], [theta.copy()], []
    n0 = max(norm(rule, model.eval(theta, rule.nodes)), 1e-300)
    note = ""

    def otd_row(rec):
        row = _blank_row(rec.k, rec.t)
        row.update(epsilon=rec.epsilon, effective_rank=rec.effective_rank,
                   sigma_ratio=rec.sigma_ratio, inner_iterations=rec.inner_iterations,
                   inner_converged=rec.inner_converged)
        if rec.k % stride == 0:
            spectra.append((rec.k, np.asarray(rec.sigma_spectrum)))
        return row

    def gram_row(k, th):
        row = _blank_row(k, k * dt)
        P = assemble_gram(model, th, rule, tau)
        row.update(effective_rank=P.effective_rank, sigma_ratio=P.condition_ratio)
        if k % stride == 0:
            spectra.append((k, P.singular_values))
        return row

    try:
        if kind in ("dto-gn", "dto-imex", "ngd"):
            rows.append(gram_row(0, theta))
        for k in range(K):
            t = k * dt
            if kind == "otd-explicit":
                theta, rec = otd_step_explicit(model, theta, rhs, t, dt, rule, tau,
                                               solver=s["solver"], on_singular=cfg["on_singular"],
                                               k=k)
                rows.append(otd_row(rec))
            elif kind == "otd-zeta":
                theta, rec = otd_step_zeta(model, theta, rhs, t, dt, s["zeta"], rule, tau,
                                           max_iter=s["inner_max_iter"], tol=s["inner_tol"],
                                           line_search=s["line_search"],
                                           on_singular=cfg["on_singular"], k=k)
                rows.append(otd_row(rec))
            elif kind == "ngd":
                theta = natural_gradient_step(model, theta, prob.energy, dt, rule, tau,
                                              prob.metric_rule)
                rows.append(gram_row(k + 1, theta))
            else:
                if kind == "dto-imex":
                    theta, rec = dto_step_imex(model, theta, rhs, t, dt, rule, s["L"], tau,
                                               alpha=s["alpha"], line_search=s["line_search"],
                                               tol=s["gn_tol"], k=k)
                else:
                    start = None
                    if s["inner_perturbation"] > 0:
                        start = theta + s["inner_perturbation"] * rng.uniform(-1, 1, theta.shape)
                    theta, rec = dto_gauss_newton_solve(model, theta, rhs, t, dt, s["zeta"], rule,
                                                        s["L"], s["alpha"], s["line_search"], tau,
                                                        tol=s["gn_tol"], k=k, start=start)
                row = gram_row(k + 1, theta)
                row.update(residual_norm=rec.residual_norm, gn_iterations=rec.gn_iterations,
                           gn_converged=rec.gn_converged,
                           first_order_violation=rec.first_order_violation)
                rows.append(row)
            thetas.append(theta.copy())
            size = norm(rule, model.eval(theta, rule.nodes))
            if not np.isfinite(size) or size > cfg["diagnostics"]["blowup_factor"] * n0:
                raise DivergenceError(f"solution norm blew up at step {k + 1}")
        if kind in ("otd-explicit", "otd-zeta"):
            # projection error at the final state closes the trapezoid sum
            _, rec = otd_step_explicit(model, theta, rhs, K * dt, dt, rule, tau, k=K)
            rows.append(otd_row(rec))
    except DivergenceError as exc:
        note = str(exc)
    return rows, thetas, spectra, note


def _margin(bound, values):
    bound = np.asarray(bound, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    if not np.any(ok):
        return None
    gap = bound[ok] - values[ok]
    return float(np.min(gap)), int(np.flatnonzero(ok)[np.argmin(gap)])


def _check(target, name, bound, values, label):
    res = _margin(bound, values)
    if res is None:
        return
    margin, at = res
    scale = max(1.0, float(np.nanmax(np.abs(bound))))
    target[name] = {"margin": margin, "at_step": at, "label": label,
                               "holds": margin >= -BOUND_SLACK * scale}


def _postprocess(cfg, prob, rows, thetas):
    """Fill error, norm, bound and envelope columns; returns the summary fragment."""
    model, rule, dt = prob.model, prob.rule, cfg["dt"]
    kind = cfg["scheme"]["kind"]
    n = len(thetas)
    times = dt * np.arange(n)
    norms = np.array([norm(rule, model.eval(th, rule.nodes)) for th in thetas])
    errors = np.full(n, np.nan)
    if prob.reference is not None:
        errors = np.array([norm(rule, prob.reference(t, rule.nodes) - model.eval(th, rule.nodes))
                           for t, th in zip(times, thetas)])
    for k, row in enumerate(rows[:n]):
        row["norm_M"] = norms[k]
        row["error"] = errors[k]
        if prob.energy is not None:
            row["loss"] = loss(prob.energy, model, thetas[k], rule)
        if prob.base_groups:
            row["group_spread"] = group_spread(thetas[k], prob.base_groups)
    summary = {"bounds": {}, "stability": {}}
    e0 = prob.e0
    C, C0, lam = prob.C, prob.C0, prob.lam
    const = cfg["constants"]
    complete = n == cfg.n_steps + 1

    if kind in ("otd-explicit", "otd-zeta") and len(rows) == n:
        eps = np.array([r["epsilon"] for r in rows])
        b1 = accumulate_bound_lipschitz(times, eps, C, e0)
        for r, b in zip(rows, b1):
            r["bound_lipschitz"] = b
        _check(summary["bounds"], "otd_lipschitz", b1, errors, "computed")
        if lam is not None and prob.rhs.stiff == "laplacian":
            b2 = accumulate_bound_laplacian(times, eps, C, lam, e0)
            for r, b in zip(rows, b2):
                r["bound_laplacian"] = b
            _check(summary["bounds"], "otd_laplacian", b2, errors, "computed")
        use_lam = lam if prob.rhs.stiff == "laplacian" else None
        S = stability_envelope(times, norms[0], C, C0, use_lam)
        for r, b in zip(rows, S):
            r["stability_bound"] = b
        _check(summary["stability"], "otd_norm", S, norms, "declared constants")

    if kind in ("dto-gn", "dto-imex"):
        res_norms = np.array([r["residual_norm"] for r in rows[1:n]])
        zeta = cfg["scheme"]["zeta"]
        e_label = None
        if prob.reference is not None and getattr(prob.reference, "rhs_evaluator", None):
            e_label = "oracle-assisted"
        elif const["time_error_bound"] is not None:
            e_label = "assumed"
        if kind == "dto-gn" and e_label and zeta in (0.0, 1.0):
            implicit = zeta == 0.0
            if e_label == "oracle-assisted":
                e_k = time_integration_errors(prob.reference, rule, times, implicit=implicit)
            else:
                e_k = np.full(n - 1, const["time_error_bound"])
            if not implicit:
                B = accumulate_dto_bound_explicit(res_norms, C, dt, e0, e_k)
                for r, b in zip(rows, B):
                    r["bound_explicit"] = b
                _check(summary["bounds"], "dto_explicit", B, errors, e_label)
            elif lam is not None and prob.rhs.stiff == "laplacian":
                B = accumulate_dto_bound_implicit(res_norms, C, lam, dt, e0, e_k)
                for r, b in zip(rows, B):
                    r["bound_implicit"] = b
                _check(summary["bounds"], "dto_implicit", B, errors, e_label)
        # the envelopes assume stationary iterates; GN may stop at L just above its own tol
        violation = max((r["first_order_violation"] for r in rows[1:n]), default=np.nan)
        stationary = complete and violation < cfg["diagnostics"]["stationarity_tol"]
        if (kind == "dto-imex" or zeta == 1.0) and complete:
            entries = {}
            for eps in const["eps_param"]:
                if not 1.0 - eps * dt > 0:
                    entries[str(eps)] = {"skipped": "1 - eps dt <= 0"}
                    continue
                S = dto_stability_envelope(n - 1, norms[0], C, C0, dt, eps, model)
                res = _margin(S, norms**2)
                scale = max(1.0, float(np.max(np.abs(S[np.isfinite(S)]))))
                entries[str(eps)] = {"margin": res[0], "at_step": res[1],
                                     "holds": res[0] >= -BOUND_SLACK * scale,
                                     "stationary": bool(stationary),
                                     "max_first_order_violation": violation}
                if eps == const["eps_param"][0]:
                    for r, b in zip(rows, S):
                        r["stability_bound_sq"] = b
            summary["stability"]["dto_norm_sq"] = entries
    summary["errors"] = {
        "initial": float(errors[0]) if n else None,
        "final": float(errors[-1]) if n and np.isfinite(errors[-1]) else None,
        "max": float(np.nanmax(errors)) if np.any(np.isfinite(errors)) else None,
    }
    return summary


def execute(cfg: ExperimentConfig) -> RunResult:
    """Run one experiment in memory; no files are written."""
    t_start = time.perf_counter()
    prob = build_problem(cfg)
    rows, thetas, spectra, note = _integrate(cfg, prob)
    summary = _postprocess(cfg, prob, rows, thetas)
    res_col = np.array([r["residual_norm"] for r in rows], dtype=float)
    res_col = res_col[np.isfinite(res_col)]
    eps_col = np.array([r["epsilon"] for r in rows], dtype=float)
    eps_col = eps_col[np.isfinite(eps_col)]
    falsified = [k for k, v in summary["bounds"].items() if not v["holds"]]
    summary.update({
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "problem": cfg.problem_id,
        "scheme": cfg.scheme_kind,
        "n_params": prob.model.n_params,
        "steps_requested": cfg.n_steps,
        "steps_completed": len(thetas) - 1,
        "diverged": bool(note),
        "divergence_message": note,
        "initial_error_e0": prob.e0,
        "constants": {"C": prob.C, "C0": prob.C0, "lambda_star": prob.lam},
        "residual_stats": ({"max": float(res_col.max()), "mean": float(res_col.mean())}
                           if res_col.size else None),
        "epsilon_stats": ({"max": float(eps_col.max()), "mean": float(eps_col.mean())}
                          if eps_col.size else None),
        "min_bound_margin": (min(v["margin"] for v in summary["bounds"].values())
                             if summary["bounds"] else None),
        "falsified_bounds": falsified,
        "valid": not falsified,
        "wall_time_s": time.perf_counter() - t_start,
    })
    if prob.base_groups is not None:
        spreads = [r["group_spread"] for r in rows]
        summary["collapse"] = {
            "groups": [list(map(int, g)) for g in prob.base_groups],
            "max_spread": float(np.nanmax(spreads)) if spreads else None,
            "persistent": bool(np.nanmax(spreads) < cfg["diagnostics"]["spread_tol"])
            if spreads else None,
            "ranks": sorted({int(r["effective_rank"]) for r in rows}),
        }
    return RunResult(cfg, prob, rows, thetas, spectra, summary, bool(note), note)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def steps_csv_text(result: RunResult):
    p = result.problem.model.n_params
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STEP_COLUMNS + [f"theta_{i}" for i in range(p)])
    for k, row in enumerate(result.rows):
        theta = result.thetas[k] if k < len(result.thetas) else np.full(p, np.nan)
        writer.writerow([_fmt(row[c]) for c in STEP_COLUMNS] + [_fmt(v) for v in theta])
    return buf.getvalue()


def spectra_csv_text(result: RunResult):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "index", "sigma"])
    for k, spec in result.spectra:
        for i, s in enumerate(spec):
            writer.writerow([k, i, _fmt(s)])
    return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def write_artifacts(result: RunResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "steps.csv").write_text(steps_csv_text(result))
    (out / "spectra.csv").write_text(spectra_csv_text(result))
    (out / "summary.json").write_text(
        json.dumps(result.summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return out


def resolve_output_dir(cfg: ExperimentConfig, fallback_name):
    """Relative output paths live under :func:`output_root`; absolute ones are kept."""
    path = Path(cfg["output_dir"] or fallback_name)
    return path if path.is_absolute() else output_root() / path


def run(cfg: ExperimentConfig, out_dir=None):
    """Execute and write artifacts; returns the :class:`RunResult`."""
    result = execute(cfg)
    target = out_dir or resolve_output_dir(cfg, f"{cfg.problem_id}-{cfg.config_hash()}")
    write_artifacts(result, target)
    result.summary["output_dir"] = str(target)
    return result


SWEEP_AXES = {"dt": "dt", "tau": "tau", "n_kernels": "model.n_kernels", "L": "scheme.L"}


def sweep(cfg: ExperimentConfig, axis, values, out_dir=None):
    """One run per value plus a comparison table; returns ``(results, table_rows)``.

    For the ``dt`` axis the table carries observed orders from successive
    error ratios.  For DtO ``L`` sweeps it carries the largest parameter gap
    to the explicit OtD trajectory of the same config.
    """
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"sweep axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    if axis == "L" and cfg.scheme_kind not in ("dto-gn", "dto-imex"):
        raise ConfigurationError("sweep axis 'L' needs a DtO scheme")
    base_dir = Path(out_dir) if out_dir else resolve_output_dir(
        cfg, f"{cfg.problem_id}-sweep-{axis}-{cfg.config_hash()}")
    baseline = None
    if axis == "L":
        baseline = execute(cfg.replace("scheme.kind", "otd-explicit"))
    results, table = [], []
    for val in values:
        sub = cfg.replace(SWEEP_AXES[axis], val)
        res = run(sub, base_dir / f"{axis}={val}")
        results.append(res)
        row = {"value": val, "final_error": res.summary["errors"]["final"],
               "min_bound_margin": res.summary["min_bound_margin"],
               "valid": res.summary["valid"], "diverged": res.diverged,
               "config_hash": res.summary["config_hash"]}
        if "collapse" in res.summary:
            row["persistent"] = res.summary["collapse"]["persistent"]
        if baseline is not None:
            m = min(len(baseline.thetas), len(res.thetas))
            gaps = [float(np.max(np.abs(baseline.thetas[k] - res.thetas[k]))) for k in range(m)]
            row["max_theta_gap_vs_otd"] = max(gaps)
            row["theta_gap_step10"] = gaps[10] if m > 10 else None
        table.append(row)
    if axis == "dt":
        for i, row in enumerate(table):
            row["observed_order"] = None
            if i:
                e0, e1 = table[i - 1]["final_error"], row["final_error"]
                v0, v1 = float(table[i - 1]["value"]), float(row["value"])
                if e0 and e1 and e0 > 0 and e1 > 0:
                    row["observed_order"] = math.log(e0 / e1) / math.log(v0 / v1)
    base_dir.mkdir(parents=True, exist_ok=True)
    keys = list(dict.fromkeys(k for row in table for k in row))
    with open(base_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(keys)
        for row in table:
            writer.writerow([_fmt(row[k]) if isinstance(row.get(k), (float, int, np.floating))
                             else ("" if row.get(k) is None else row[k]) for k in keys])
    return results, table


def compare(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig, out_dir=None):
    """Paired trajectory difference; returns ``(max_gap, per_step_gaps, results)``."""
    ra, rb = execute(cfg_a), execute(cfg_b)
    if ra.problem.model.n_params != rb.problem.model.n_params:
        raise ConfigurationError("compared configs have different parameter counts")
    m = min(len(ra.thetas), len(rb.thetas))
    gaps = [float(np.max(np.abs(ra.thetas[k] - rb.thetas[k]))) for k in range(m)]
    target = Path(out_dir) if out_dir else output_root() / (
        f"compare-{cfg_a.config_hash()}-{cfg_b.config_hash()}")
    target.mkdir(parents=True, exist_ok=True)
    with open(target / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "max_abs_theta_gap"])
        for k, g in enumerate(gaps):
            writer.writerow([k, _fmt(g)])
    info = {"schema_version": SCHEMA_VERSION, "config_hash_a": cfg_a.config_hash(),
            "config_hash_b": cfg_b.config_hash(), "steps": m - 1,
            "max_abs_theta_gap": max(gaps) if gaps else None}
    (target / "compare.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return (max(gaps) if gaps else 0.0), gaps, (ra, rb)
