"""Experiment configuration: YAML loading, defaults, validation and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigurationError

__all__ = ["ExperimentConfig", "load_config", "config_from_dict", "DEFAULTS", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

PROBLEMS = ("P1", "P2", "P3", "collapse")
SCHEMES = ("otd-explicit", "otd-zeta", "dto-gn", "dto-imex", "ngd")

DEFAULTS = {
    "problem": {"id": "P2"},
    "model": {
        "kind": "gaussian-mixture",
        "n_kernels": 6,
        "bandwidth": 0.15,
        "trainable_bandwidth": False,
        "mask": None,              # None picks the problem's natural mask
    },
    "scheme": {
        "kind": "otd-explicit",
        "zeta": 1.0,
        "L": 1,
        "alpha": 1.0,
        "line_search": True,
        "solver": "lstsq",
        "inner_max_iter": 20,
        "inner_tol": 1e-10,
        "gn_tol": 1e-9,
        "inner_perturbation": 0.0,
    },
    "dt": 1e-4,
    "T": 0.01,
    "quadrature": {"kind": "gauss-legendre", "n": 64, "seed": 0},
    "tau": 1e-10,
    "on_singular": "min-norm",
    "constants": {"C": None, "C0": 0.0, "lambda_star": None, "eps_param": [0.1, 1.0],
                  "time_error_bound": None},
    "reference": {"kind": "auto", "n": 1024, "dt_ref": 1e-4},
    "diagnostics": {"spectra_stride": 1, "duplicate_tol": 1e-8, "spread_tol": 1e-10,
                    "blowup_factor": 1e8, "stationarity_tol": 1e-7},
    "seed": 0,
    "output_dir": None,
}

PROBLEM_DEFAULTS = {
    "P1": {"velocity": 1.0, "acceleration": 2.0, "center": 0.0, "width": 0.1,
           "amplitude": 1.0, "lower": [-2.0], "upper": [2.0]},
    "P2": {"reaction": -1.0, "modes": [[1, 1.0], [3, 0.5]], "lower": [0.0], "upper": [1.0]},
    "P3": {"target": "bump", "lower": [0.0], "upper": [1.0], "metric_quadrature_n": None},
    "collapse": {"rhs": "heat", "reaction": 0.0, "velocity": 1.0, "center": 0.5,
                 "weight": 1.0, "perturbation": 0.0, "lower": [0.0], "upper": [1.0]},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if key not in out:
            raise ConfigurationError(f"unknown config field '{path}{key}'")
        if isinstance(out[key], dict) and not isinstance(val, dict) and val is not None:
            raise ConfigurationError(f"config field '{path}{key}' must be a mapping")
        if isinstance(out[key], dict) and isinstance(val, dict) and key != "problem":
            out[key] = _merge(out[key], val, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _number(raw, field, *, positive=False, nonneg=False, integer=False, lo=None, hi=None):
    if isinstance(raw, bool) or raw is None:
        raise ConfigurationError(f"config field '{field}' must be a number, got {raw!r}")
    try:
        val = int(raw) if integer else float(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(f"config field '{field}' must be a number, got {raw!r}") from None
    if integer and float(raw) != val:
        raise ConfigurationError(f"config field '{field}' must be an integer, got {raw!r}")
    if positive and not val > 0:
        raise ConfigurationError(f"config field '{field}' must be positive, got {raw!r}")
    if nonneg and not val >= 0:
        raise ConfigurationError(f"config field '{field}' must be non-negative, got {raw!r}")
    if lo is not None and val < lo or hi is not None and val > hi:
        raise ConfigurationError(f"config field '{field}' must lie in [{lo}, {hi}], got {raw!r}")
    return val


def _choice(raw, field, options):
    if raw not in options:
        raise ConfigurationError(f"config field '{field}' must be one of {list(options)}, got {raw!r}")
    return raw


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; ``data`` is the normalized tree."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def problem_id(self):
        return self.data["problem"]["id"]

    @property
    def scheme_kind(self):
        return self.data["scheme"]["kind"]

    @property
    def n_steps(self):
        return int(round(self.data["T"] / self.data["dt"]))

    def config_hash(self):
        payload = {k: v for k, v in self.data.items() if k != "output_dir"}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, dotted, value):
        """Copy with one field changed (``"scheme.L"``), revalidated."""
        return self.updated({dotted: value})

    def updated(self, changes):
        """Copy with several dotted fields changed at once, validated once."""
        raw = copy.deepcopy(self.data)
        for dotted, value in changes.items():
            node = raw
            keys = dotted.split(".")
            for key in keys[:-1]:
                node = node[key]
            if keys[-1] not in node:
                raise ConfigurationError(f"unknown config field '{dotted}'")
            node[keys[-1]] = value
        return config_from_dict(raw)


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")
    data = _merge(DEFAULTS, raw)
    prob = data["problem"]
    if not isinstance(prob, dict) or "id" not in prob:
        raise ConfigurationError("config field 'problem.id' is required")
    pid = _choice(prob["id"], "problem.id", PROBLEMS)
    data["problem"] = _merge(PROBLEM_DEFAULTS[pid], {k: v for k, v in prob.items() if k != "id"},
                             "problem.")
    data["problem"]["id"] = pid
    _validate(data)
    return ExperimentConfig(data)


def _validate(d):
    p = d["problem"]
    pid = p["id"]
    if len(p["lower"]) != 1 or len(p["upper"]) != 1 or not p["upper"][0] > p["lower"][0]:
        raise ConfigurationError("config fields 'problem.lower'/'problem.upper' must be 1-d with lower < upper")
    m = d["model"]
    _choice(m["kind"], "model.kind", ("gaussian-mixture", "shallow-network"))
    m["n_kernels"] = _number(m["n_kernels"], "model.n_kernels", positive=True, integer=True)
    m["bandwidth"] = _number(m["bandwidth"], "model.bandwidth", positive=True)
    if m["mask"] is not None:
        _choice(m["mask"], "model.mask", ("none", "homogeneous-dirichlet"))
    s = d["scheme"]
    _choice(s["kind"], "scheme.kind", SCHEMES)
    s["zeta"] = _number(s["zeta"], "scheme.zeta", lo=0.0, hi=1.0)
    s["L"] = _number(s["L"], "scheme.L", positive=True, integer=True)
    s["alpha"] = _number(s["alpha"], "scheme.alpha", positive=True, hi=1.0)
    _choice(s["solver"], "scheme.solver", ("lstsq", "normal"))
    _choice(s["line_search"], "scheme.line_search", (True, False))
    for key in ("inner_tol", "gn_tol"):
        s[key] = _number(s[key], f"scheme.{key}", positive=True)
    s["inner_max_iter"] = _number(s["inner_max_iter"], "scheme.inner_max_iter", positive=True,
                                  integer=True)
    s["inner_perturbation"] = _number(s["inner_perturbation"], "scheme.inner_perturbation",
                                      nonneg=True)
    if s["kind"] == "ngd" and pid != "P3":
        raise ConfigurationError("config field 'scheme.kind': ngd needs problem P3")
    if s["kind"] == "dto-imex" and pid not in ("P2", "collapse"):
        raise ConfigurationError("config field 'scheme.kind': dto-imex needs a Laplacian rhs")
    d["dt"] = _number(d["dt"], "dt", positive=True)
    d["T"] = _number(d["T"], "T", positive=True)
    if d["T"] < d["dt"]:
        raise ConfigurationError("config field 'T' must be at least dt")
    n = d["T"] / d["dt"]
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConfigurationError("config field 'T' must be an integer multiple of dt")
    q = d["quadrature"]
    _choice(q["kind"], "quadrature.kind", ("gauss-legendre", "trapezoid", "monte-carlo"))
    q["n"] = _number(q["n"], "quadrature.n", positive=True, integer=True)
    d["tau"] = _number(d["tau"], "tau", nonneg=True, hi=1.0)
    _choice(d["on_singular"], "on_singular", ("min-norm", "raise"))
    c = d["constants"]
    if c["C"] is not None:
        c["C"] = _number(c["C"], "constants.C", nonneg=True)
    c["C0"] = _number(c["C0"], "constants.C0", nonneg=True)
    if c["lambda_star"] is not None:
        c["lambda_star"] = _number(c["lambda_star"], "constants.lambda_star", positive=True)
    if c["time_error_bound"] is not None:
        c["time_error_bound"] = _number(c["time_error_bound"], "constants.time_error_bound",
                                        nonneg=True)
    eps = c["eps_param"]
    c["eps_param"] = [_number(e, "constants.eps_param", positive=True)
                      for e in (eps if isinstance(eps, list) else [eps])]
    r = d["reference"]
    _choice(r["kind"], "reference.kind", ("auto", "analytic", "fine-grid", "none"))
    r["n"] = _number(r["n"], "reference.n", positive=True, integer=True)
    r["dt_ref"] = _number(r["dt_ref"], "reference.dt_ref", positive=True)
    g = d["diagnostics"]
    g["spectra_stride"] = _number(g["spectra_stride"], "diagnostics.spectra_stride",
                                  positive=True, integer=True)
    g["duplicate_tol"] = _number(g["duplicate_tol"], "diagnostics.duplicate_tol",
                                 positive=True, hi=1.0)
    g["spread_tol"] = _number(g["spread_tol"], "diagnostics.spread_tol", positive=True)
    g["stationarity_tol"] = _number(g["stationarity_tol"], "diagnostics.stationarity_tol",
                                    positive=True)
    g["blowup_factor"] = _number(g["blowup_factor"], "diagnostics.blowup_factor", positive=True)
    d["seed"] = _number(d["seed"], "seed", nonneg=True, integer=True)


def load_config(path):
    """Parse a YAML config file; errors name the line or the offending field."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigurationError(f"{path}: YAML parse error at {where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: YAML parse error: {exc}") from exc
    return config_from_dict(raw or {})
