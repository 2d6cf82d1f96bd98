"""Iterative predictive control over safe-set terminal states.

Each iteration replays the task from the start state, improving on the
previous iteration's trajectory. At every time step the controller:

1. selects a terminal state among the previous trajectory's states via a
   lazy loop that queries the black box only for the currently best
   candidate, re-ranking after each cost-to-go update;
2. builds the fallback plan obtained by advancing last step's plan one step
   along the previous trajectory;
3. applies the first input of whichever plan has the lower overall cost.

Candidate plans come from the fixed-terminal solver; a candidate whose
solve reports infeasibility is simply outside the reachable set and scores
as infinite cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .blackbox import Predictor
from .costs import (
    INFINITE_COST,
    CostWeights,
    StageCostRecord,
    known_stage_cost,
    trajectory_overall_cost,
)
from .dynamics import SystemModel, is_at_equilibrium
from .trajopt import (
    DYNAMICS_TOL,
    HorizonPlan,
    TERMINAL_TOL,
    plan_defect,
    solve_fixed_terminal_batch,
)

__all__ = [
    "Trajectory",
    "SafeSet",
    "DmpcConfig",
    "ConvergenceReport",
    "NoFeasibleCandidate",
    "StepLimitExceeded",
    "compute_cost_to_go",
    "build_safe_set",
    "select_terminal_lazy",
    "select_terminal_enumerate",
    "shifted_plan",
    "dmpc_step",
    "run_iteration",
    "run",
    "trajectory_difference",
    "validate_trajectory",
]

logger = logging.getLogger("dmpc.engine")


class NoFeasibleCandidate(Exception):
    """Every candidate terminal state was unreachable from the query state."""


class StepLimitExceeded(Exception):
    """A rollout failed to enter the goal ball within its step budget."""


@dataclass
class Trajectory:
    """A realized rollout with aligned stage costs and cost-to-go values."""

    states: np.ndarray
    inputs: np.ndarray
    stage_h: np.ndarray | None = None
    stage_z: np.ndarray | None = None
    cost_to_go: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.states.ndim != 2 or self.inputs.ndim != 2:
            raise ValueError("states and inputs must be 2-d arrays")
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError("need exactly one more state than inputs")
        for name in ("stage_h", "stage_z"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != (self.inputs.shape[0],):
                    raise ValueError(f"{name} is not aligned with inputs")
                setattr(self, name, v)
        if self.cost_to_go is not None:
            self.cost_to_go = np.asarray(self.cost_to_go, dtype=float)

    @property
    def stage_costs(self):
        return [
            StageCostRecord(float(h), float(z))
            for h, z in zip(self.stage_h, self.stage_z)
        ]

    def num_steps(self) -> int:
        return self.inputs.shape[0]


def compute_cost_to_go(traj: Trajectory) -> Trajectory:
    """Fill cost-to-go by backward suffix sums of the stage costs.

    The final state gets exactly zero; every earlier entry satisfies
    q[t] = h[t] + z[t] + q[t+1] bit-for-bit.
    """
    if traj.stage_h is None or traj.stage_z is None:
        raise ValueError("stage costs must be populated first")
    T = traj.num_steps()
    q = np.zeros(T + 1)
    for t in range(T - 1, -1, -1):
        q[t] = traj.stage_h[t] + traj.stage_z[t] + q[t + 1]
    return replace(traj, cost_to_go=q)


@dataclass
class DmpcConfig:
    """Engine parameters for one task."""

    model: SystemModel
    weights: CostWeights
    x_start: np.ndarray
    x_goal: np.ndarray
    horizon: int
    convergence_eps: float = 1e-4
    equilibrium_tol: float = 1e-3
    max_steps_per_iteration: int = 500
    max_iterations: int = 10
    prune_radius_factor: float = 1.0
    solve_chunk: int = 8
    # iteration budget per candidate solve during the terminal scan; a
    # candidate that cannot be pinned within it counts as unreachable
    candidate_inner_budget: int = 800
    # skip candidates more than this many indices past the most advanced
    # terminal proven reachable at the previous time step (heuristic; the
    # shifted fallback keeps the rollout feasible regardless)
    frontier_slack: int = 5
    enumerate_all: bool = False
    repredict_shifted: bool = False
    descent_tol: float = 1e-6
    monotonicity_tol: float = 1e-6

    def __post_init__(self):
        self.x_start = np.asarray(self.x_start, dtype=float)
        self.x_goal = np.asarray(self.x_goal, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.convergence_eps <= 0 or self.equilibrium_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps_per_iteration < 1 or self.max_iterations < 1:
            raise ValueError("iteration caps must be at least 1")


class SafeSet:
    """Previous trajectory states with their mutable cost-to-go table.

    ``q_base`` holds the previous iteration's cost-to-go; ``q_table`` is the
    per-time-step working copy whose entries grow by the predicted black-box
    cost of the plan reaching them; ``visited`` records which entries were
    updated. Plans are memoized per time step; solver warm starts persist
    across time steps.
    """

    def __init__(self, candidates, q_base, prev_inputs):
        self.candidates = np.asarray(candidates, dtype=float)
        self.q_base = np.asarray(q_base, dtype=float)
        self.prev_inputs = np.asarray(prev_inputs, dtype=float)
        if self.candidates.shape[0] != self.q_base.shape[0]:
            raise ValueError("cost-to-go table must match the candidates")
        self.q_table = self.q_base.copy()
        self.visited: set[int] = set()
        self.plan_cache: dict[int, HorizonPlan | None] = {}
        self.warm_inputs: dict[int, np.ndarray] = {}
        self.warm_multipliers: dict[int, np.ndarray] = {}
        self._pending: list[int] = []
        self._x_t: np.ndarray | None = None
        self.frontier_index: int | None = None

    def size(self) -> int:
        return self.candidates.shape[0]

    def begin_step(self, x_t, cfg: DmpcConfig):
        """Reset the per-time-step state and precompute the solve order.

        Candidates whose position lies beyond the model's travel bound are
        marked unreachable outright. The rest carry an admissible score
        lower bound (terminal compensation plus the least possible
        approach cost given the travel bound) used for pruning, and are
        solved in the order of an estimated score so the incumbent best
        drops quickly.
        """
        N = cfg.horizon
        model = cfg.model
        self._x_t = np.asarray(x_t, dtype=float)
        self.q_table = self.q_base.copy()
        self.visited = set()
        self.plan_cache = {}
        lb = (N + 1) * self.q_base
        estimate = lb.copy()
        allowed = list(range(self.size()))
        if self.frontier_index is not None:
            cutoff = self.frontier_index + cfg.frontier_slack
            allowed = [r for r in allowed if r <= cutoff]
            for r in range(cutoff + 1, self.size()):
                self.plan_cache[r] = None
        step_dist = model.max_step_distance()
        if step_dist is not None and model.position_indices:
            idx = list(model.position_indices)
            reach = model.reachable_distance_bound(self._x_t, N)
            radius = cfg.prune_radius_factor * min(step_dist * N, reach)
            dist = np.linalg.norm(
                self.candidates[:, idx] - self._x_t[idx], axis=1
            )
            allowed = [r for r in range(self.size()) if dist[r] <= radius]
            for r in range(self.size()):
                if dist[r] > radius:
                    self.plan_cache[r] = None  # provably unreachable in N steps
            # least possible approach cost: the position gap shrinks by at
            # most one step's travel per stage
            p_pos = float(np.min(cfg.weights.p_diag[idx]))
            if p_pos > 0.0:
                for k in range(N):
                    gap = np.maximum(0.0, dist - k * step_dist)
                    lb = lb + p_pos * gap * gap
            # straight-line shrink estimate, for ordering only
            shrink = sum((1.0 - k / N) ** 2 for k in range(N))
            estimate = lb + p_pos * shrink * dist * dist
        self._pending = sorted(allowed, key=lambda r: (estimate[r], r))
        self._lb = lb

    def _warm_start_for(self, r, N, model):
        if r in self.warm_inputs:
            return self.warm_inputs[r], self.warm_multipliers.get(r)
        # replay window of the previous trajectory ending at candidate r
        T = self.prev_inputs.shape[0]
        k0 = r - N
        if k0 >= 0 and r <= T:
            U0 = self.prev_inputs[k0:r]
        else:
            pad = np.tile(model.u_eq, (N - max(r, 0), 1))
            U0 = np.vstack([pad, self.prev_inputs[0:max(r, 0)]])
        return U0, None

    def solve_candidates(self, indices, cfg: DmpcConfig):
        """Batch-solve the fixed-terminal problem for the given candidates."""
        if not indices:
            return
        N = cfg.horizon
        model = cfg.model
        warms = []
        lams = []
        for r in indices:
            U0, lam0 = self._warm_start_for(r, N, model)
            warms.append(U0)
            lams.append(np.zeros(model.n) if lam0 is None else lam0)
        plans, infos = solve_fixed_terminal_batch(
            model,
            cfg.weights,
            N,
            self._x_t,
            self.candidates[list(indices)],
            self.q_base[list(indices)],
            warm_starts=np.array(warms),
            warm_multipliers=np.array(lams),
            inner_budget=cfg.candidate_inner_budget,
        )
        for r, plan, info in zip(indices, plans, infos):
            if plan is not None:
                plan.terminal_index = r
            self.plan_cache[r] = plan
            self.warm_inputs[r] = info.inputs
            self.warm_multipliers[r] = info.multipliers

    def ensure_solved_below(self, threshold, cfg: DmpcConfig):
        """Solve every pending candidate whose lower bound could still win."""
        batch = []
        keep = []
        for r in self._pending:
            if self._lb[r] <= threshold:
                batch.append(r)
                if len(batch) >= cfg.solve_chunk:
                    self.solve_candidates(batch, cfg)
                    batch = []
            else:
                keep.append(r)
        self.solve_candidates(batch, cfg)
        self._pending = keep

    def solve_next_chunk(self, cfg: DmpcConfig) -> bool:
        """Solve the next pending chunk unconditionally; False if none left."""
        batch = self._pending[:cfg.solve_chunk]
        self._pending = self._pending[cfg.solve_chunk:]
        self.solve_candidates(batch, cfg)
        return bool(batch)

    def exhausted(self) -> bool:
        return not self._pending

    def note_frontier(self):
        """Record the most advanced terminal proven reachable this step."""
        feasible = [r for r, p in self.plan_cache.items() if p is not None]
        if feasible:
            self.frontier_index = max(feasible)


def build_safe_set(prev: Trajectory) -> SafeSet:
    """All states of the previous trajectory become terminal candidates."""
    if prev.cost_to_go is None:
        raise ValueError("previous trajectory needs cost-to-go values")
    return SafeSet(prev.states, prev.cost_to_go, prev.inputs)


def _score(ss: SafeSet, r: int) -> float:
    """Ranking value: the model cost, plus the black-box cost once known."""
    plan = ss.plan_cache.get(r)
    if plan is None:
        return INFINITE_COST
    if r in ss.visited:
        return plan.j_model + plan.z_sum
    return plan.j_model


def _solved_argmin(ss: SafeSet):
    best_r = None
    best = INFINITE_COST
    for r, plan in ss.plan_cache.items():
        if plan is None:
            continue
        s = _score(ss, r)
        if s < best or (s == best and best_r is not None and r < best_r):
            best = s
            best_r = r
    return best_r, best


def select_terminal_lazy(x_t, ss: SafeSet, pred: Predictor,
                         cfg: DmpcConfig) -> HorizonPlan:
    """Pick the terminal state by lazily querying the black box.

    Repeats: take the argmin of the candidate scores; if that candidate's
    cost-to-go was already updated with its predicted black-box cost, stop
    and return its plan, otherwise query the black box for its plan, fold
    the result into the score table, and re-rank. Candidates are solved on
    demand in lower-bound order, so terminals whose cost-to-go alone already
    loses never get a solve.
    """
    if ss.size() == 0:
        raise NoFeasibleCandidate("safe set is empty")
    ss.begin_step(x_t, cfg)

    while True:
        best_r, best = _solved_argmin(ss)
        # make sure no unsolved candidate could beat the current best
        while best_r is None and not ss.exhausted():
            ss.solve_next_chunk(cfg)
            best_r, best = _solved_argmin(ss)
        if best_r is None:
            raise NoFeasibleCandidate(
                "no candidate terminal state is reachable from the query state"
            )
        ss.ensure_solved_below(best, cfg)
        best_r, best = _solved_argmin(ss)

        if best_r in ss.visited:
            plan = ss.plan_cache[best_r]
            logger.debug("lazy selection done: terminal %d score %.6g",
                         best_r, best)
            ss.note_frontier()
            return plan
        plan = ss.plan_cache[best_r]
        z = pred.predict_segment(plan.states, plan.inputs)
        plan.z_values = np.asarray(z, dtype=float)
        plan.z_sum = float(np.sum(plan.z_values))
        ss.q_table[best_r] = ss.q_base[best_r] + plan.z_sum
        ss.visited.add(best_r)
        logger.debug("queried terminal %d: model %.6g blackbox %.6g",
                     best_r, plan.j_model, plan.z_sum)


def select_terminal_enumerate(x_t, ss: SafeSet, pred: Predictor,
                              cfg: DmpcConfig) -> HorizonPlan:
    """Query the black box for every feasible candidate and take the argmin.

    The brute-force protocol: same solver, same candidate set, no laziness.
    Serves as the reference for the lazy loop and as the sample-efficiency
    baseline.
    """
    if ss.size() == 0:
        raise NoFeasibleCandidate("safe set is empty")
    ss.begin_step(x_t, cfg)
    while ss.solve_next_chunk(cfg):
        pass
    best_r = None
    best = INFINITE_COST
    for r in sorted(ss.plan_cache):
        plan = ss.plan_cache[r]
        if plan is None:
            continue
        z = pred.predict_segment(plan.states, plan.inputs)
        plan.z_values = np.asarray(z, dtype=float)
        plan.z_sum = float(np.sum(plan.z_values))
        ss.q_table[r] = ss.q_base[r] + plan.z_sum
        ss.visited.add(r)
        if plan.j_overall < best:
            best = plan.j_overall
            best_r = r
    if best_r is None:
        raise NoFeasibleCandidate(
            "no candidate terminal state is reachable from the query state"
        )
    ss.note_frontier()
    return ss.plan_cache[best_r]


def shifted_plan(prev_plan: HorizonPlan, prev_traj: Trajectory, ss: SafeSet,
                 pred: Predictor, model: SystemModel,
                 repredict=False) -> HorizonPlan:
    """Advance last step's plan one step along the previous trajectory.

    Drops the first state/input and appends the previous trajectory's next
    state via its recorded input. The overall cost reuses the retained
    steps' stored stage values plus N * q(tail terminal) + q(appended
    state); no black-box query is needed unless ``repredict`` asks for one.
    When the plan already ended at the final state, it holds there.
    """
    if prev_plan.terminal_index is None:
        raise ValueError("previous plan does not carry a terminal index")
    if prev_plan.z_values is None:
        raise ValueError("previous plan was never scored against the black box")
    tau = prev_plan.terminal_index
    T = prev_traj.num_steps()
    N = prev_plan.horizon()
    if tau >= T:
        appended_state = prev_traj.states[T]
        appended_input = model.u_eq
        new_tau = T
        q_tau = 0.0
        q_next = 0.0
    else:
        appended_state = prev_traj.states[tau + 1]
        appended_input = prev_traj.inputs[tau]
        new_tau = tau + 1
        q_tau = float(prev_traj.cost_to_go[tau])
        q_next = float(prev_traj.cost_to_go[tau + 1])

    states = np.vstack([prev_plan.states[1:], appended_state[None]])
    inputs = np.vstack([prev_plan.inputs[1:], appended_input[None]])
    # the appended step is paid for by the cost-to-go terms, so it carries
    # zero stored stage values for any further shift
    ell_values = np.append(prev_plan.ell_values[1:], 0.0)
    z_values = np.append(prev_plan.z_values[1:], 0.0)
    j_model = float(np.sum(ell_values) + N * q_tau + q_next)
    plan = HorizonPlan(
        states=states,
        inputs=inputs,
        ell_values=ell_values,
        j_model=j_model,
        q_term=q_next,
        z_values=z_values,
        z_sum=float(np.sum(z_values)),
        terminal_index=new_tau,
        source="shifted",
    )
    if repredict:
        z = pred.predict_segment(states, inputs)
        plan.z_values = np.asarray(z, dtype=float)
        plan.z_sum = float(np.sum(plan.z_values))
    plan.defect = plan_defect(model, plan)
    return plan


def dmpc_step(x_t, ss: SafeSet, prev_plan, prev_traj: Trajectory,
              pred: Predictor, cfg: DmpcConfig):
    """One receding-horizon step: plan, select, apply the first input.

    Returns (applied input, next state, accepted plan). The freshly
    optimized plan wins ties against the shifted fallback.
    """
    plan_a = None
    select_error = None
    select = select_terminal_enumerate if cfg.enumerate_all else select_terminal_lazy
    try:
        plan_a = select(x_t, ss, pred, cfg)
    except NoFeasibleCandidate as err:
        select_error = err
    plan_b = None
    if prev_plan is not None:
        plan_b = shifted_plan(prev_plan, prev_traj, ss, pred, cfg.model,
                              repredict=cfg.repredict_shifted)
    if plan_a is None and plan_b is None:
        raise select_error or NoFeasibleCandidate("no plan available")
    if plan_a is None:
        accepted = plan_b
    elif plan_b is None or plan_a.j_overall <= plan_b.j_overall:
        accepted = plan_a
    else:
        accepted = plan_b
    u = accepted.inputs[0].copy()
    x_next = cfg.model.step(x_t, u)
    return u, x_next, accepted


@dataclass
class IterationStats:
    """Per-step diagnostics gathered while rolling out one iteration."""

    steps: int = 0
    plan_sources: list = field(default_factory=list)
    terminal_indices: list = field(default_factory=list)
    accepted_costs: list = field(default_factory=list)
    descent_violations: list = field(default_factory=list)
    fresh_plan_failures: int = 0


def _run_iteration(prev: Trajectory, pred: Predictor, cfg: DmpcConfig):
    model = cfg.model
    ss = build_safe_set(prev)
    x = prev.states[0].copy()
    states = [x.copy()]
    inputs = []
    stage_h = []
    stage_z = []
    stats = IterationStats()
    prev_plan = None
    prev_cost = None
    prev_decrement = None

    while not is_at_equilibrium(x, cfg.x_goal, cfg.equilibrium_tol,
                                model.angle_indices):
        if stats.steps >= cfg.max_steps_per_iteration:
            raise StepLimitExceeded(
                f"goal ball not reached within {cfg.max_steps_per_iteration} steps"
            )
        u, x_next, plan = dmpc_step(x, ss, prev_plan, prev, pred, cfg)
        if plan.source == "optimized":
            assert 0 <= plan.terminal_index < ss.size()
            assert plan.terminal_residual <= TERMINAL_TOL
        h = known_stage_cost(x, u, cfg.x_goal, cfg.weights)
        z = float(pred.predict_segment(np.stack([x, x_next]), u[None])[0])
        j_now = plan.j_overall
        if prev_cost is not None and np.isfinite(prev_cost) and np.isfinite(j_now):
            bound = prev_cost - prev_decrement
            if j_now > bound + cfg.descent_tol:
                stats.descent_violations.append(
                    {"step": stats.steps, "excess": float(j_now - bound)}
                )
        tau = plan.terminal_index
        if tau < prev.num_steps():
            q_decrement = float(prev.cost_to_go[tau] - prev.cost_to_go[tau + 1])
        else:
            q_decrement = 0.0
        prev_cost = j_now
        prev_decrement = float(plan.ell_values[0] + plan.z_values[0]) + q_decrement

        logger.debug("t=%d source=%s terminal=%d cost=%.6g",
                     stats.steps, plan.source, plan.terminal_index, j_now)
        stats.plan_sources.append(plan.source)
        stats.terminal_indices.append(int(plan.terminal_index))
        stats.accepted_costs.append(float(j_now))
        states.append(x_next.copy())
        inputs.append(u)
        stage_h.append(h)
        stage_z.append(z)
        stats.steps += 1
        prev_plan = plan
        x = x_next

    traj = Trajectory(
        states=np.array(states),
        inputs=np.array(inputs).reshape(len(inputs), model.m),
        stage_h=np.array(stage_h),
        stage_z=np.array(stage_z),
    )
    return compute_cost_to_go(traj), stats


def run_iteration(prev: Trajectory, pred: Predictor,
                  cfg: DmpcConfig) -> Trajectory:
    """Roll one full improvement pass from the start state to the goal ball."""
    traj, _ = _run_iteration(prev, pred, cfg)
    return traj


def trajectory_difference(a: Trajectory, b: Trajectory, x_goal) -> float:
    """Sum of per-step L1 state differences, padding the shorter with the goal."""
    x_goal = np.asarray(x_goal, dtype=float)
    la, lb = a.states.shape[0], b.states.shape[0]
    length = max(la, lb)
    total = 0.0
    for t in range(length):
        xa = a.states[t] if t < la else x_goal
        xb = b.states[t] if t < lb else x_goal
        total += float(np.sum(np.abs(xa - xb)))
    return total


@dataclass
class ConvergenceReport:
    """Outcome of a full run: per-iteration metrics and invariant flags."""

    converged: bool
    iterations: int
    per_iteration: list
    monotonicity_violations: list
    total_queries: int
    total_samples: int
    iteration_stats: list = field(default_factory=list)


def run(initial: Trajectory, pred: Predictor, cfg: DmpcConfig):
    """Iterate improvement passes until the trajectory stops changing.

    Each pass produces a candidate trajectory; just as every time step
    selects the cheaper of two plans, the iteration level keeps whichever
    of candidate and incumbent costs less, so the published sequence can
    never worsen. A pass whose candidate loses ends the run (re-running the
    deterministic pass on the unchanged incumbent would repeat it); the
    attempt is recorded in its report row. Otherwise the run stops when the
    summed state difference to the previous iteration falls below
    ``convergence_eps``, or after ``max_iterations``. Monotonicity
    violations beyond tolerance in the published sequence are flagged in
    the report, not raised.
    """
    if initial.cost_to_go is None:
        initial = compute_cost_to_go(initial)
    trajectories = []
    per_iteration = []
    monotonicity_violations = []
    iteration_stats = []
    prev = initial
    converged = False
    base_queries = pred.query_count
    base_samples = pred.sample_count
    for j in range(1, cfg.max_iterations + 1):
        q0, s0 = pred.query_count, pred.sample_count
        candidate, stats = _run_iteration(prev, pred, cfg)
        iteration_stats.append(stats)
        cost = trajectory_overall_cost(candidate)
        prev_cost = trajectory_overall_cost(prev)
        rejected = cost > prev_cost
        if rejected:
            logger.info(
                "iteration %d regressed by %.3g; keeping the incumbent",
                j, cost - prev_cost,
            )
            traj = prev
            cost = prev_cost
        else:
            traj = candidate
        delta = trajectory_difference(traj, prev, cfg.x_goal)
        if cost > prev_cost + cfg.monotonicity_tol:
            monotonicity_violations.append(
                {"iteration": j, "increase": float(cost - prev_cost)}
            )
            logger.warning("iteration %d increased the cost by %.3g", j,
                           cost - prev_cost)
        per_iteration.append({
            "iteration": j,
            "overall_cost": float(cost),
            "steps": traj.num_steps(),
            "blackbox_queries": pred.query_count - q0,
            "blackbox_samples": pred.sample_count - s0,
            "delta_to_prev": float(delta),
            "descent_violations": len(stats.descent_violations),
            "shifted_steps": stats.plan_sources.count("shifted"),
            "rejected_candidate_cost": float(trajectory_overall_cost(candidate))
            if rejected else None,
        })
        trajectories.append(traj)
        prev = traj
        if rejected or delta < cfg.convergence_eps:
            converged = True
            break
    report = ConvergenceReport(
        converged=converged,
        iterations=len(trajectories),
        per_iteration=per_iteration,
        monotonicity_violations=monotonicity_violations,
        total_queries=pred.query_count - base_queries,
        total_samples=pred.sample_count - base_samples,
        iteration_stats=iteration_stats,
    )
    return trajectories, report


def validate_trajectory(traj: Trajectory, model: SystemModel, x_goal,
                        equilibrium_tol, x_start=None) -> list:
    """Check the stored-trajectory invariants; returns a list of problems."""
    problems = []
    if x_start is not None and not np.array_equal(traj.states[0],
                                                  np.asarray(x_start)):
        problems.append("first state differs from the start state")
    if not is_at_equilibrium(traj.states[-1], x_goal, equilibrium_tol,
                             model.angle_indices):
        problems.append("final state is outside the goal ball")
    for t in range(traj.num_steps()):
        pred_state = model.step(traj.states[t], traj.inputs[t])
        defect = float(np.max(np.abs(pred_state - traj.states[t + 1])))
        if defect > DYNAMICS_TOL:
            problems.append(f"dynamics defect {defect:.2e} at step {t}")
            break
    q = traj.cost_to_go
    if q is None:
        problems.append("cost-to-go is missing")
    else:
        if q[-1] != 0.0:
            problems.append("final cost-to-go is not zero")
        for t in range(traj.num_steps()):
            if q[t] != traj.stage_h[t] + traj.stage_z[t] + q[t + 1]:
                problems.append(f"cost-to-go recursion broken at step {t}")
                break
    return problems
