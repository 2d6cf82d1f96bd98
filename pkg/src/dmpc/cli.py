"""Command-line surface: run experiments, verify artifacts, run oracles.

``--config`` accepts either a JSON file path or a registered scenario name
(see ``dmpc.scenarios``). Set ``DMPC_LOG`` to a logging level name for
verbose output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import scenarios
from .blackbox import build_predictor
from .engine import build_safe_set, select_terminal_enumerate
from .harness import (
    build_engine_config,
    build_model,
    generate_initial_trajectory,
    load_config,
    run_experiment,
    verify_artifacts,
)
from .oracles import min_full_horizon_cost


def _resolve_config(name_or_path, out=None, seed=None, max_iters=None):
    if os.path.exists(name_or_path):
        cfg = load_config(name_or_path)
    else:
        cfg = scenarios.get_scenario(name_or_path)
    if out is not None:
        cfg.output_dir = out
    if seed is not None:
        cfg.seed = seed
    if max_iters is not None:
        cfg.max_iterations = max_iters
    return cfg


def _cmd_run(args):
    cfg = _resolve_config(args.config, args.out, args.seed, args.max_iters)
    artifacts = run_experiment(cfg)
    report = artifacts.report
    print(f"scenario: {cfg.scenario}")
    print(f"converged: {report.converged} after {report.iterations} iterations")
    for row in report.per_iteration:
        print(f"  iteration {row['iteration']}: cost {row['overall_cost']:.6f}"
              f" steps {row['steps']} queries {row['blackbox_queries']}"
              f" samples {row['blackbox_samples']}"
              f" delta {row['delta_to_prev']:.3e}")
    print(f"total black-box samples: {report.total_samples}")
    if report.monotonicity_violations:
        print(f"monotonicity violations: {report.monotonicity_violations}")
        return 1
    return 0 if report.converged else 1


def _cmd_verify(args):
    report = verify_artifacts(args.out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["ok"] else 1


def _cmd_oracle(args):
    """Brute-force references: full-horizon cost and enumeration selection."""
    cfg = _resolve_config(args.config, seed=args.seed)
    model = build_model(cfg)
    ecfg = build_engine_config(cfg, model)
    pred = build_predictor(cfg.predictor)
    initial = generate_initial_trajectory(cfg, pred)
    print(f"initial trajectory: {initial.num_steps()} steps, "
          f"cost {float(initial.cost_to_go[0]):.6f}")
    if cfg.model["type"] == "linear":
        best = min_full_horizon_cost(
            model, ecfg.weights, ecfg.x_start, ecfg.x_goal,
            t_max=initial.num_steps() + 10,
        )
        print(f"full-horizon exact-arrival cost (best over lengths): {best:.6f}")
    ss = build_safe_set(initial)
    pred.reset_counters()
    plan = select_terminal_enumerate(ecfg.x_start, ss, pred, ecfg)
    print(f"enumeration at the start state: terminal index "
          f"{plan.terminal_index}, overall cost {plan.j_overall:.6f}, "
          f"queries {pred.query_count}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dmpc",
        description="Predictive control with a black-box stage cost.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("--config", required=True,
                       help="config JSON path or scenario name")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--max-iters", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="replay logs, check invariants")
    p_verify.add_argument("--out", required=True, help="artifact directory")
    p_verify.set_defaults(func=_cmd_verify)

    p_oracle = sub.add_parser("oracle", help="run brute-force references")
    p_oracle.add_argument("--config", required=True,
                          help="config JSON path or scenario name")
    p_oracle.add_argument("--seed", type=int, default=None)
    p_oracle.set_defaults(func=_cmd_oracle)

    level = os.environ.get("DMPC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")

    args = parser.parse_args(argv)
    np.set_printoptions(precision=6, suppress=True)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
