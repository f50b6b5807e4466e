"""Command-line entry point: ``cbg {run,sweep,bias-demo,variance-demo,reference-gen}``.

Failures print a JSON object ``{"error", "type", "details"}`` to stderr and
exit with status 2 (bad input) or 1 (runtime failure).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from ._validation import ContractError
from .config import ConfigError, load_config


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _add_config_args(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--task", type=int)
    p.add_argument("--method")
    p.add_argument("--num-steps", "-N", dest="num_steps", type=int)
    p.add_argument("-K", dest="K", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("-C", dest="C", type=float)
    p.add_argument("--temper-mode", dest="temper_mode")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--task-seed", dest="task_seed", type=int)
    p.add_argument("--output", "-o")
    p.add_argument("--jobs", type=int, help="worker count (default: $CBG_WORKERS or 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="cbg", description="Calibrated Bayesian guidance experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_config_args(sub.add_parser("run", help="sample one configuration and score it with C2ST"))
    _add_config_args(sub.add_parser("sweep", help="grid search under the N*K budget"))

    p = sub.add_parser("bias-demo", help="theorem bias table and tempered sampling comparison")
    p.add_argument("--gammas", type=_floats, default=[0.5, 1.0, 2.0])
    p.add_argument("--t-grid", type=_floats, default=[0.1, 0.3, 0.5, 0.7, 0.9])
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-sampling", action="store_true", help="skip the sampled-posterior comparison")
    p.add_argument("--output", "-o", default="results/bias_demo.csv")

    p = sub.add_parser("variance-demo", help="gradient-free vs gradient-based estimator variance")
    p.add_argument("-K", dest="K", type=int, default=1000)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--t-grid", type=_floats)
    p.add_argument("--xt-grid", type=_floats)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default="results/variance_demo.csv")

    p = sub.add_parser("reference-gen", help="draw reference posterior samples for a task")
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--samples", "-n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)
    return parser


def _config_from(args):
    direct = {k: getattr(args, k) for k in (
        "task", "method", "num_steps", "K", "gamma", "C", "temper_mode", "samples", "seed", "task_seed", "output"
    )}
    return load_config(args.config, args.overrides, **direct)


def _check_positive(name, value):
    if value < 1:
        raise ConfigError([(name, f"must be >= 1, got {value}")])


def _dispatch(args):
    if args.command == "run":
        cfg = _config_from(args)
        result = harness.run(cfg, n_jobs=args.jobs)
        return {"output": cfg.output, "row": result.row}
    if args.command == "sweep":
        cfg = _config_from(args)
        rows, best = harness.sweep(cfg, n_jobs=args.jobs)
        return {"output": cfg.output, "cells": len(rows), "best": best}
    if args.command == "bias-demo":
        _check_positive("samples", args.samples)
        rows, sampled = harness.bias_demo(args.output, args.gammas, args.t_grid, args.samples, args.seed,
                                          sampling=not args.no_sampling)
        return {"output": args.output, "rows": len(rows), "sampling": sampled}
    if args.command == "variance-demo":
        _check_positive("K", args.K)
        _check_positive("reps", args.reps)
        rows = harness.variance_demo(args.output, args.K, args.reps, args.t_grid, args.xt_grid, args.seed)
        return {"output": args.output, "rows": len(rows)}
    if args.command == "reference-gen":
        _check_positive("samples", args.samples)
        batch = harness.reference_gen(args.task, args.samples, args.output, args.seed, args.task_seed)
        return {"output": args.output, "strategy": batch.strategy, "samples": len(batch)}
    raise ContractError(f"unknown command {args.command!r}")


def _error(exc, code):
    details = {}
    if isinstance(exc, ConfigError):
        details["problems"] = [{"field": k, "message": m} for k, m in exc.problems]
    for attr in ("t", "rows", "diagnostics"):
        if getattr(exc, attr, None) is not None:
            details[attr] = getattr(exc, attr)
    payload = {"error": str(exc), "type": type(exc).__name__, "details": details}
    print(json.dumps(payload, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else str(o)), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; keep --help at 0
        if exc.code in (0, None):
            return 0
        return _error(ContractError("invalid command-line arguments"), 2)
    try:
        summary = _dispatch(args)
    except (ContractError, ValueError) as exc:
        return _error(exc, 2)
    except Exception as exc:  # report anything else as a runtime failure
        return _error(exc, 1)
    print(json.dumps(summary, default=lambda o: o.item() if isinstance(o, np.generic) else str(o)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
