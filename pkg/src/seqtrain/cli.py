"""Command line entry point: ``seqtrain run|sweep|compare``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import ConfigurationError, DivergenceError, NumericalError
from .runner import compare, run, sweep

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_FALSIFIED = 0, 2, 3, 4

log = logging.getLogger("seqtrain")


def _parse_values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok))
        except ValueError:
            try:
                out.append(float(tok))
            except ValueError:
                raise ConfigurationError(f"sweep value {tok!r} is not a number") from None
    if not out:
        raise ConfigurationError("--values needs at least one number")
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="seqtrain",
                                     description="Sequential-in-time training experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (overrides the config)")
    p_run.add_argument("--strict-bounds", action="store_true",
                       help="exit 4 when any a posteriori bound is falsified")

    p_sweep = sub.add_parser("sweep", help="repeat a config over one axis")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", required=True, choices=["dt", "tau", "n_kernels", "L"])
    p_sweep.add_argument("--values", required=True, help="comma-separated list")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--strict-bounds", action="store_true")

    p_cmp = sub.add_parser("compare", help="paired parameter-trajectory difference")
    p_cmp.add_argument("config_a")
    p_cmp.add_argument("config_b")
    p_cmp.add_argument("--out", default=None)
    return parser


def _report(result):
    s = result.summary
    line = {k: s.get(k) for k in ("problem", "scheme", "config_hash", "steps_completed",
                                  "min_bound_margin", "valid", "output_dir")}
    line["final_error"] = s["errors"]["final"]
    print(json.dumps(line, sort_keys=True))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            result = run(load_config(args.config), args.out)
            _report(result)
            if result.diverged:
                print(f"diverged: {result.message}", file=sys.stderr)
                return EXIT_DIVERGED
            if args.strict_bounds and not result.valid:
                print(f"falsified bounds: {result.summary['falsified_bounds']}", file=sys.stderr)
                return EXIT_FALSIFIED
            return EXIT_OK
        if args.command == "sweep":
            results, table = sweep(load_config(args.config), args.axis,
                                   _parse_values(args.values), args.out)
            for row in table:
                print(json.dumps(row, sort_keys=True, default=str))
            if any(r.diverged for r in results):
                return EXIT_DIVERGED
            if args.strict_bounds and not all(r.valid for r in results):
                return EXIT_FALSIFIED
            return EXIT_OK
        gap, gaps, _ = compare(load_config(args.config_a), load_config(args.config_b), args.out)
        print(json.dumps({"max_abs_theta_gap": gap, "steps": len(gaps) - 1}))
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NumericalError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
