"""Experiment runner: config parsing, initial trajectories, and artifacts.

A run reads one JSON config, generates (or loads) a feasible initial
trajectory, iterates the controller to convergence, and writes three
artifacts into the output directory:

``config.json``
    the fully resolved configuration, including the predictor field
    parameters (for offline plotting only; the controller never reads them)
``trajectories.csv``
    one row per realized step of every iteration, full float precision,
    replayable through the dynamics
``metrics.json``
    per-iteration summary and totals, byte-stable for a fixed seed
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .blackbox import Predictor, build_predictor
from .costs import CostWeights, known_stage_cost
from .dynamics import (
    BicycleParams,
    KinematicBicycle,
    LinearSystem,
    is_at_equilibrium,
)
from .engine import (
    ConvergenceReport,
    DmpcConfig,
    Trajectory,
    compute_cost_to_go,
    run,
    validate_trajectory,
)
from .trajopt import FixedTerminalProblem, solve_fixed_terminal

__all__ = [
    "ExperimentConfig",
    "RunArtifacts",
    "InitialTrajectoryFailed",
    "load_config",
    "save_config",
    "build_model",
    "build_engine_config",
    "generate_initial_trajectory",
    "run_experiment",
    "verify_artifacts",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

logger = logging.getLogger("dmpc.harness")


class InitialTrajectoryFailed(Exception):
    """The tracking policy did not reach the goal ball within the step cap."""


@dataclass
class ExperimentConfig:
    """One experiment: system, costs, task, predictor, and run controls."""

    scenario: str
    model: dict
    p_diag: list
    r_diag: list
    x_start: list
    x_goal: list
    horizon: int
    convergence_eps: float
    equilibrium_tol: float
    max_steps_per_iteration: int
    max_iterations: int
    predictor: dict
    initial_trajectory: dict = field(default_factory=lambda: {"source": "generated"})
    prune_radius_factor: float = 1.0
    enumerate_all: bool = False
    repredict_shifted: bool = False
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.convergence_eps <= 0 or self.equilibrium_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.model.get("type") not in ("kinematic_bicycle", "linear"):
            raise ValueError(f"unknown model type: {self.model.get('type')!r}")
        if self.initial_trajectory.get("source") not in ("generated", "file"):
            raise ValueError("initial_trajectory.source must be generated|file")
        if self.initial_trajectory.get("source") == "file":
            path = self.initial_trajectory.get("path")
            if not path or not os.path.exists(path):
                raise ValueError(f"initial trajectory file not found: {path!r}")
        if len(self.x_start) != len(self.x_goal):
            raise ValueError("start and goal states differ in dimension")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        return cls(**data)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(cfg: ExperimentConfig, path: str):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_model(cfg: ExperimentConfig):
    spec = cfg.model
    if spec["type"] == "kinematic_bicycle":
        return KinematicBicycle(
            BicycleParams(spec["l_f"], spec["l_r"]),
            dt=spec["dt"],
            v_max=spec.get("v_max", 4.0),
            delta_max=spec.get("delta_max", np.pi / 7),
            a_max=spec.get("a_max", 1.0),
        )
    A = np.asarray(spec["A"], dtype=float)
    B = np.asarray(spec["B"], dtype=float)
    n, m = B.shape
    inf = np.inf

    def bound(key, size, default):
        v = spec.get(key)
        if v is None:
            return np.full(size, default)
        return np.asarray(v, dtype=float)

    return LinearSystem(
        A, B, spec["dt"],
        x_lo=bound("x_lo", n, -inf), x_hi=bound("x_hi", n, inf),
        u_lo=bound("u_lo", m, -inf), u_hi=bound("u_hi", m, inf),
    )


def build_engine_config(cfg: ExperimentConfig, model=None) -> DmpcConfig:
    model = model or build_model(cfg)
    return DmpcConfig(
        model=model,
        weights=CostWeights(np.asarray(cfg.p_diag, dtype=float),
                            np.asarray(cfg.r_diag, dtype=float)),
        x_start=np.asarray(cfg.x_start, dtype=float),
        x_goal=np.asarray(cfg.x_goal, dtype=float),
        horizon=cfg.horizon,
        convergence_eps=cfg.convergence_eps,
        equilibrium_tol=cfg.equilibrium_tol,
        max_steps_per_iteration=cfg.max_steps_per_iteration,
        max_iterations=cfg.max_iterations,
        prune_radius_factor=cfg.prune_radius_factor,
        enumerate_all=cfg.enumerate_all,
        repredict_shifted=cfg.repredict_shifted,
    )


# --- initial trajectories --------------------------------------------------


def _record_step(pred, ecfg, x, u, x_next, hs, zs):
    hs.append(known_stage_cost(x, u, ecfg.x_goal, ecfg.weights))
    zs.append(float(pred.predict_segment(np.stack([x, x_next]), u[None])[0]))


def _linear_initial(ecfg: DmpcConfig, pred: Predictor) -> Trajectory:
    """Saturated low-gain feedback rolled into the goal ball.

    The gain is deliberately gentle (control made expensive) so the seed
    trajectory is feasible but clearly suboptimal, leaving the improvement
    work to the controller.
    """
    model = ecfg.model
    Q = np.diag(np.maximum(ecfg.weights.p_diag, 1e-3))
    R = 50.0 * np.eye(model.m)
    P = scipy.linalg.solve_discrete_are(model.A, model.B, Q, R)
    K = np.linalg.solve(R + model.B.T @ P @ model.B, model.B.T @ P @ model.A)
    x = ecfg.x_start.copy()
    states = [x.copy()]
    inputs = []
    hs, zs = [], []
    for _ in range(ecfg.max_steps_per_iteration):
        if is_at_equilibrium(x, ecfg.x_goal, ecfg.equilibrium_tol,
                             model.angle_indices):
            break
        u = np.clip(-K @ (x - ecfg.x_goal), model.u_lo, model.u_hi)
        x_next = model.step(x, u)
        _record_step(pred, ecfg, x, u, x_next, hs, zs)
        states.append(x_next.copy())
        inputs.append(u)
        x = x_next
    else:
        raise InitialTrajectoryFailed(
            "feedback policy did not reach the goal ball within the step cap"
        )
    traj = Trajectory(np.array(states), np.array(inputs).reshape(-1, model.m),
                      np.array(hs), np.array(zs))
    return compute_cost_to_go(traj)


def _pure_pursuit_input(x, path_pts, model, v_ref, lookahead=4.0):
    pos = x[:2]
    psi, v = x[2], x[3]
    # closest point on the polyline, then the target one lookahead further
    seg = path_pts - pos
    dists = np.linalg.norm(seg, axis=1)
    i0 = int(np.argmin(dists))
    target = path_pts[min(i0 + int(lookahead / 0.5), len(path_pts) - 1)]
    wheelbase = model.params.l_f + model.params.l_r
    alpha = np.arctan2(target[1] - pos[1], target[0] - pos[0]) - psi
    alpha = np.arctan2(np.sin(alpha), np.cos(alpha))
    ld = max(np.linalg.norm(target - pos), 1e-6)
    delta = np.arctan2(2.0 * wheelbase * np.sin(alpha), ld)
    a = 1.5 * (v_ref - v)
    u = np.array([delta, a])
    return np.clip(u, model.u_lo, model.u_hi)


def _bicycle_initial(ecfg: DmpcConfig, pred: Predictor) -> Trajectory:
    """Pure pursuit along a waypoint path, docked onto the goal state.

    The tracker alone cannot land inside a tight goal ball while moving at
    the goal speed, so once the vehicle is near the approach line the final
    leg is planned with the fixed-terminal solver, which pins the goal
    state to solver tolerance.
    """
    model = ecfg.model
    goal = ecfg.x_goal
    goal_dir = np.array([np.cos(goal[2]), np.sin(goal[2])])
    start = ecfg.x_start
    start_dir = np.array([np.cos(start[2]), np.sin(start[2])])
    knots = np.array([
        start[:2],
        start[:2] + 2.5 * start_dir,
        0.65 * start[:2] + 0.35 * goal[:2] + np.array([0.0, 2.0]),
        0.3 * start[:2] + 0.7 * goal[:2] + np.array([0.0, 1.0]),
        goal[:2] - 12.0 * goal_dir,
        goal[:2] + 6.0 * goal_dir,
    ])
    # densify the polyline for stable closest-point lookup
    pts = []
    for a, b in zip(knots[:-1], knots[1:]):
        n_seg = max(2, int(np.linalg.norm(b - a) / 0.5))
        for t in np.linspace(0.0, 1.0, n_seg, endpoint=False):
            pts.append(a + t * (b - a))
    pts.append(knots[-1])
    path_pts = np.array(pts)

    x = start.copy()
    states = [x.copy()]
    inputs = []
    hs, zs = [], []
    v_cruise = 2.8
    dock_radius = model.x_hi[3] * ecfg.horizon * model.dt * 0.5
    for _ in range(ecfg.max_steps_per_iteration):
        if is_at_equilibrium(x, goal, ecfg.equilibrium_tol,
                             model.angle_indices):
            break
        dist_goal = float(np.linalg.norm(x[:2] - goal[:2]))
        if dist_goal <= dock_radius:
            problem = FixedTerminalProblem(x, goal, ecfg.horizon, model,
                                           ecfg.weights, 0.0)
            plan = solve_fixed_terminal(problem)
            if plan is not None:
                for k in range(plan.horizon()):
                    u = plan.inputs[k]
                    x_next = model.step(x, u)
                    _record_step(pred, ecfg, x, u, x_next, hs, zs)
                    states.append(x_next.copy())
                    inputs.append(u.copy())
                    x = x_next
                break
        v_ref = v_cruise if dist_goal > 12.0 else max(goal[3], 1.0)
        u = _pure_pursuit_input(x, path_pts, model, v_ref)
        x_next = model.step(x, u)
        _record_step(pred, ecfg, x, u, x_next, hs, zs)
        states.append(x_next.copy())
        inputs.append(u)
        x = x_next
    if not is_at_equilibrium(x, goal, ecfg.equilibrium_tol,
                             model.angle_indices):
        raise InitialTrajectoryFailed(
            "tracking policy did not reach the goal ball within the step cap"
        )
    traj = Trajectory(np.array(states), np.array(inputs).reshape(-1, model.m),
                      np.array(hs), np.array(zs))
    return compute_cost_to_go(traj)


def generate_initial_trajectory(cfg: ExperimentConfig,
                                pred: Predictor) -> Trajectory:
    """A feasible (not optimal) rollout from the start into the goal ball."""
    ecfg = build_engine_config(cfg)
    if cfg.initial_trajectory.get("source") == "file":
        return read_trajectory_csv(cfg.initial_trajectory["path"],
                                   ecfg.model.n, ecfg.model.m)
    if isinstance(ecfg.model, KinematicBicycle):
        return _bicycle_initial(ecfg, pred)
    return _linear_initial(ecfg, pred)


# --- artifacts --------------------------------------------------------------


CSV_STATIC_FIELDS = ["iter", "t"]
CSV_TAIL_FIELDS = ["h", "zhat", "q", "terminal_index", "plan_source"]


def _csv_header(n, m):
    return (CSV_STATIC_FIELDS
            + [f"x{i}" for i in range(n)]
            + [f"u{i}" for i in range(m)]
            + CSV_TAIL_FIELDS)


def write_trajectory_csv(path, iterations, n, m):
    """Write realized trajectories; floats keep full round-trip precision.

    ``iterations`` is a list of (trajectory, sources, terminal_indices);
    the entry for the initial trajectory passes empty per-step metadata.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(n, m))
        for it, (traj, sources, terminals) in enumerate(iterations):
            T = traj.num_steps()
            for t in range(T):
                row = [it, t]
                row += [repr(float(v)) for v in traj.states[t]]
                row += [repr(float(v)) for v in traj.inputs[t]]
                row += [repr(float(traj.stage_h[t])),
                        repr(float(traj.stage_z[t])),
                        repr(float(traj.cost_to_go[t]))]
                row += [terminals[t] if terminals else -1,
                        sources[t] if sources else "initial"]
                writer.writerow(row)
            row = [it, T]
            row += [repr(float(v)) for v in traj.states[T]]
            row += [repr(0.0)] * m
            row += [repr(0.0), repr(0.0), repr(float(traj.cost_to_go[T]))]
            row += [-1, "final"]
            writer.writerow(row)


def read_trajectory_csv(path, n, m):
    """Load the trajectories; returns {iteration: Trajectory}, or one
    Trajectory when the file holds a single iteration."""
    by_iter = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rec = by_iter.setdefault(int(row["iter"]), [])
            rec.append(row)
    out = {}
    for it, rows in by_iter.items():
        rows.sort(key=lambda r: int(r["t"]))
        states = np.array([[float(r[f"x{i}"]) for i in range(n)] for r in rows])
        inputs = np.array([[float(r[f"u{i}"]) for i in range(m)]
                           for r in rows[:-1]]).reshape(len(rows) - 1, m)
        hs = np.array([float(r["h"]) for r in rows[:-1]])
        zs = np.array([float(r["zhat"]) for r in rows[:-1]])
        qs = np.array([float(r["q"]) for r in rows])
        out[it] = Trajectory(states, inputs, hs, zs, qs)
    if len(out) == 1:
        return next(iter(out.values()))
    return out


@dataclass
class RunArtifacts:
    """Paths and summary of one completed experiment."""

    output_dir: str
    config_path: str
    trajectory_log: str
    metrics_path: str
    report: ConvergenceReport
    trajectories: list


def run_experiment(cfg: ExperimentConfig) -> RunArtifacts:
    """Wire predictor, initial trajectory, and the engine; write artifacts."""
    out = cfg.output_dir or "runs/latest"
    os.makedirs(out, exist_ok=True)
    pred = build_predictor(cfg.predictor)
    ecfg = build_engine_config(cfg)

    q0, s0 = pred.query_count, pred.sample_count
    initial = generate_initial_trajectory(cfg, pred)
    init_queries = pred.query_count - q0
    init_samples = pred.sample_count - s0
    problems = validate_trajectory(initial, ecfg.model, ecfg.x_goal,
                                   ecfg.equilibrium_tol, ecfg.x_start)
    if problems:
        raise InitialTrajectoryFailed("; ".join(problems))
    logger.info("initial trajectory: %d steps, cost %.4f",
                initial.num_steps(), float(initial.cost_to_go[0]))

    trajectories, report = run(initial, pred, ecfg)

    iterations = [(initial, None, None)]
    for traj, stats, row in zip(trajectories, report.iteration_stats,
                                report.per_iteration):
        if row.get("rejected_candidate_cost") is not None:
            # the pass regressed, so the incumbent was republished; its
            # per-step plan metadata belongs to the rejected candidate
            iterations.append((traj, ["kept"] * traj.num_steps(),
                               [-1] * traj.num_steps()))
        else:
            iterations.append((traj, stats.plan_sources,
                               stats.terminal_indices))
    csv_path = os.path.join(out, "trajectories.csv")
    write_trajectory_csv(csv_path, iterations, ecfg.model.n, ecfg.model.m)

    config_path = os.path.join(out, "config.json")
    save_config(cfg, config_path)

    per_iteration = [{
        "iteration": 0,
        "overall_cost": float(initial.cost_to_go[0]),
        "steps": initial.num_steps(),
        "blackbox_queries": init_queries,
        "blackbox_samples": init_samples,
        "delta_to_prev": None,
        "descent_violations": 0,
        "shifted_steps": 0,
    }] + report.per_iteration
    metrics = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "converged": report.converged,
        "iterations": report.iterations,
        "per_iteration": per_iteration,
        "monotonicity_violations": report.monotonicity_violations,
        "totals": {
            "blackbox_queries": report.total_queries + init_queries,
            "blackbox_samples": report.total_samples + init_samples,
        },
    }
    metrics_path = os.path.join(out, "metrics.json")
    with open(metrics_path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("converged=%s after %d iterations", report.converged,
                report.iterations)
    return RunArtifacts(out, config_path, csv_path, metrics_path, report,
                        [initial] + trajectories)


def verify_artifacts(out_dir: str) -> dict:
    """Replay the logged inputs and re-check the stored invariants."""
    cfg = load_config(os.path.join(out_dir, "config.json"))
    model = build_model(cfg)
    logged = read_trajectory_csv(os.path.join(out_dir, "trajectories.csv"),
                                 model.n, model.m)
    if isinstance(logged, Trajectory):
        logged = {0: logged}
    x_goal = np.asarray(cfg.x_goal, dtype=float)
    x_start = np.asarray(cfg.x_start, dtype=float)
    report = {"iterations": len(logged), "replay_max_error": 0.0,
              "problems": []}
    for it, traj in sorted(logged.items()):
        x = traj.states[0].copy()
        worst = float(np.max(np.abs(x - x_start)))
        for t in range(traj.num_steps()):
            x = model.step(x, traj.inputs[t])
            worst = max(worst, float(np.max(np.abs(x - traj.states[t + 1]))))
        report["replay_max_error"] = max(report["replay_max_error"], worst)
        if worst > 1e-9:
            report["problems"].append(
                f"iteration {it}: replay error {worst:.2e}"
            )
        problems = validate_trajectory(traj, model, x_goal,
                                       cfg.equilibrium_tol, x_start)
        report["problems"] += [f"iteration {it}: {p}" for p in problems]
    report["ok"] = not report["problems"]
    return report
