"""Fixed-terminal finite-horizon subproblem solver.

Given a start state, a required terminal state s, and a horizon of N steps,
find inputs minimizing the terminal-referenced stage cost plus (N+1) times
the terminal state's cost-to-go, subject to the dynamics and box bounds.

Method: direct single shooting on the input sequence. The terminal equality
is handled by an augmented-Lagrangian outer loop; finite state bounds enter
the same loop as inequality terms with their own multipliers; input bounds
are exact via projection. The inner minimizer is projected gradient descent
with Barzilai-Borwein steps and a monotone Armijo line search, using
analytic gradients from the model's rollout adjoint.

Infeasibility (the terminal residual cannot be driven below tolerance
within the iteration budget) is an ordinary ``None`` result: it is how
callers learn that s lies outside the N-step reachable set of the start
state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .costs import CostWeights
from .dynamics import SystemModel

__all__ = [
    "TERMINAL_TOL",
    "DYNAMICS_TOL",
    "BOUND_TOL",
    "FixedTerminalProblem",
    "HorizonPlan",
    "SolveInfo",
    "solve_fixed_terminal",
    "solve_fixed_terminal_batch",
]

TERMINAL_TOL = 1e-4     # declared tolerance on the terminal residual (2-norm)
DYNAMICS_TOL = 1e-6     # re-simulation defect allowed on solver plans
BOUND_TOL = 1e-9        # allowed violation of state box bounds

_RES_TARGET = 1e-6      # outer loop polishes below this before declaring done
_GRAD_TOL = 1e-7        # inner stationarity: unit-step projected gradient
_MAX_OUTER = 20
_MAX_INNER = 200        # per outer iteration
_MAX_TOTAL_INNER = _MAX_OUTER * _MAX_INNER  # default per-candidate budget
_MU0 = 100.0
_MU_GROWTH = 10.0
_MU_MAX = 1e8
_ARMIJO_SIGMA = 1e-4
_REG_MIN = 1e-10
_REG_MAX = 1e12


@dataclass
class FixedTerminalProblem:
    """Reach ``terminal`` from ``x0`` in exactly ``horizon`` steps."""

    x0: np.ndarray
    terminal: np.ndarray
    horizon: int
    model: SystemModel
    weights: CostWeights
    q_term: float = 0.0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.terminal = np.asarray(self.terminal, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        n = self.model.n
        if self.x0.shape != (n,) or self.terminal.shape != (n,):
            raise ValueError("state vectors do not match the model dimension")
        for x in (self.x0, self.terminal):
            if np.any(x < self.model.x_lo - BOUND_TOL) or np.any(
                x > self.model.x_hi + BOUND_TOL
            ):
                raise ValueError("start and terminal states must be in bounds")


@dataclass
class HorizonPlan:
    """An N-step plan with its model-based and overall costs.

    ``ell_values``/``z_values`` store the per-step stage terms actually
    charged to this plan so a later time shift can reuse them. ``j_model``
    includes the (N+1) * q_term compensation; ``z_sum`` stays None until the
    black box has been queried (or the plan was assembled by shifting).
    """

    states: np.ndarray
    inputs: np.ndarray
    ell_values: np.ndarray
    j_model: float
    q_term: float
    z_values: np.ndarray | None = None
    z_sum: float | None = None
    terminal_index: int | None = None
    defect: float = 0.0
    terminal_residual: float = 0.0
    source: str = "optimized"

    @property
    def j_overall(self) -> float | None:
        if self.z_sum is None:
            return None
        return self.j_model + self.z_sum

    def horizon(self) -> int:
        return self.inputs.shape[0]


@dataclass
class SolveInfo:
    """Solver diagnostics for one candidate."""

    converged: bool
    outer_iterations: int
    inner_iterations: int
    terminal_residual: float
    bound_violation: float
    merit_history: list = field(default_factory=list)
    multipliers: np.ndarray | None = None
    inputs: np.ndarray | None = None  # final iterate, converged or not


def _stage_cost_batch(X, U, S, p, r):
    dx = X[:, :-1, :] - S[:, None, :]
    return (
        np.einsum("ckn,n,ckn->c", dx, p, dx)
        + np.einsum("ckm,m,ckm->c", U, r, U)
    )


@numba.njit(cache=True)
def _merit_kernel(X, U, S, p, r, lam, mu, nu_lo, nu_hi, mu_s, x_lo, x_hi):
    """Augmented-Lagrangian value and terminal gap for every candidate.

    Bound multipliers are carried for all state dimensions; infinite bounds
    produce gaps of -inf, which the positive-part branches ignore.
    """
    C, Np1, n = X.shape
    N = Np1 - 1
    m = U.shape[2]
    val = np.empty(C)
    cterm = np.empty((C, n))
    for ci in range(C):
        acc = 0.0
        for k in range(N):
            for i in range(n):
                d = X[ci, k, i] - S[ci, i]
                acc += p[i] * d * d
            for j in range(m):
                acc += r[j] * U[ci, k, j] * U[ci, k, j]
        for i in range(n):
            cv = X[ci, N, i] - S[ci, i]
            cterm[ci, i] = cv
            acc += lam[ci, i] * cv + 0.5 * mu[ci] * cv * cv
        ms = mu_s[ci]
        for k in range(1, Np1):
            for i in range(n):
                xv = X[ci, k, i]
                nu = nu_lo[ci, k - 1, i]
                t = nu + ms * (x_lo[i] - xv)
                if t > 0.0:
                    acc += 0.5 * (t * t - nu * nu) / ms
                elif nu > 0.0:
                    acc -= 0.5 * nu * nu / ms
                nu = nu_hi[ci, k - 1, i]
                t = nu + ms * (xv - x_hi[i])
                if t > 0.0:
                    acc += 0.5 * (t * t - nu * nu) / ms
                elif nu > 0.0:
                    acc -= 0.5 * nu * nu / ms
        val[ci] = acc
    return val, cterm


class _BatchProblem:
    """Shared data for one batched augmented-Lagrangian solve."""

    def __init__(self, model, weights, N, x0, S):
        self.model = model
        self.N = N
        self.x0 = np.asarray(x0, dtype=float)
        self.S = np.ascontiguousarray(S)
        self.p = np.ascontiguousarray(weights.p_diag)
        self.r = np.ascontiguousarray(weights.r_diag)
        self.u_lo = model.u_lo
        self.u_hi = model.u_hi
        self.x_lo = np.ascontiguousarray(model.x_lo)
        self.x_hi = np.ascontiguousarray(model.x_hi)
        self.has_state_bounds = bool(
            np.isfinite(model.x_lo).any() or np.isfinite(model.x_hi).any()
        )

    def project(self, U):
        return np.clip(U, self.u_lo, self.u_hi)

    def rollout(self, U):
        return self.model.rollout_batch(self.x0, U)

    def bound_weights(self, X, nu_lo, nu_hi, mu_s):
        """Active-set weights max(0, nu + mu_s * gap) over states 1..N."""
        g_lo = self.x_lo - X[:, 1:, :]
        g_hi = X[:, 1:, :] - self.x_hi
        w_lo = np.maximum(0.0, nu_lo + mu_s[:, None, None] * g_lo)
        w_hi = np.maximum(0.0, nu_hi + mu_s[:, None, None] * g_hi)
        return w_lo, w_hi

    def merit(self, X, U, S, lam, mu, nu_lo, nu_hi, mu_s):
        return _merit_kernel(
            X, np.ascontiguousarray(U), S, self.p, self.r, lam, mu,
            nu_lo, nu_hi, mu_s, self.x_lo, self.x_hi,
        )

    def gradient(self, X, U, c, lam, mu, nu_lo, nu_hi, mu_s):
        C = U.shape[0]
        x_bar = np.zeros((C, self.N + 1, self.model.n))
        x_bar[:, 1:-1, :] = 2.0 * self.p * (X[:, 1:-1, :] - self.S[:, None, :])
        x_bar[:, -1, :] = lam + mu[:, None] * c
        if self.has_state_bounds:
            w_lo, w_hi = self.bound_weights(X, nu_lo, nu_hi, mu_s)
            x_bar[:, 1:, :] += w_hi - w_lo
        return 2.0 * self.r * U + self.model.rollout_vjp_batch(X, U, x_bar)


def _sensitivities(A, B, N, n, m):
    """Input-to-state sensitivity stack S[k] = d x_k / d u_vec."""
    C = A.shape[0]
    D = N * m
    S = np.zeros((C, N + 1, n, D))
    for k in range(N):
        S[:, k + 1] = A[:, k] @ S[:, k]
        S[:, k + 1, :, k * m:(k + 1) * m] += B[:, k]
    return S


def _inner_minimize(bp, U, lam, mu, nu_lo, nu_hi, mu_s, active, history):
    """Monotone projected Gauss-Newton descent of the augmented Lagrangian.

    The Hessian model condenses the quadratic stage cost, the terminal
    penalty, and any active state-bound terms through the exact step
    sensitivities; box bounds on the inputs are handled by restricting the
    Newton system to the free coordinates and projecting trial points. A
    Levenberg-style damping grows on rejected steps. Frozen (inactive)
    candidates keep their inputs untouched, and every per-candidate
    quantity evolves independently of the rest of the batch.
    """
    C, N, m = U.shape
    D = N * m
    n = bp.model.n
    eye_D = np.eye(D)
    R_big = 2.0 * np.kron(np.eye(N), np.diag(bp.r))
    X = bp.rollout(U)
    F, c = bp.merit(X, U, bp.S, lam, mu, nu_lo, nu_hi, mu_s)
    G = bp.gradient(X, U, c, lam, mu, nu_lo, nu_hi, mu_s)
    reg = np.full(C, 1e-8)
    step_memory = np.ones(C)  # last accepted line-search step, per candidate
    run = active.copy()
    iters = np.zeros(C, dtype=int)
    tiny_streak = np.zeros(C, dtype=int)
    if history is not None:
        for ci in range(C):
            if active[ci]:
                history[ci].append(F[ci])

    for _ in range(_MAX_INNER):
        crit = np.abs(bp.project(U - G) - U).max(axis=(1, 2))
        run &= crit > _GRAD_TOL
        if not run.any():
            break
        iters += run

        idx = np.where(run)[0]
        A, B = bp.model.step_jacobians_batch(X[idx], U[idx])
        S = _sensitivities(A, B, N, n, m)
        H = np.broadcast_to(R_big, (len(idx), D, D)).copy()
        if N > 1:
            Sm = S[:, 1:N]
            H += np.matmul(
                Sm.transpose(0, 1, 3, 2),
                Sm * (2.0 * bp.p)[None, None, :, None],
            ).sum(axis=1)
        SN = S[:, N]
        H += mu[idx, None, None] * np.matmul(SN.transpose(0, 2, 1), SN)
        if bp.has_state_bounds:
            w_lo, w_hi = bp.bound_weights(X[idx], nu_lo[idx], nu_hi[idx],
                                          mu_s[idx])
            w = np.where(w_lo + w_hi > 0.0, mu_s[idx, None, None], 0.0)
            Sb = S[:, 1:]
            H += np.matmul(
                Sb.transpose(0, 1, 3, 2), Sb * w[..., None]
            ).sum(axis=1)

        G_flat = G.reshape(C, D)
        blocked = (
            ((U <= bp.u_lo + 1e-12) & (G > 0.0))
            | ((U >= bp.u_hi - 1e-12) & (G < 0.0))
        ).reshape(C, D)
        Gr = np.where(blocked, 0.0, G_flat)
        bsub = blocked[idx]
        mask2 = bsub[:, :, None] | bsub[:, None, :]
        Hr = np.where(mask2, 0.0, H)
        didx = np.arange(D)
        Hr[:, didx, didx] = np.where(bsub, 1.0, Hr[:, didx, didx])

        d = np.zeros((C, D))
        while True:
            try:
                d[idx] = -np.linalg.solve(
                    Hr + reg[idx, None, None] * eye_D, Gr[idx, :, None]
                )[..., 0]
                break
            except np.linalg.LinAlgError:
                reg[idx] = np.minimum(reg[idx] * 100.0, _REG_MAX)
                if reg[idx].min() >= _REG_MAX:
                    d[idx] = -Gr[idx]
                    break
        slope0 = np.einsum("cd,cd->c", Gr, d)
        bad = run & (slope0 >= 0.0)
        if bad.any():  # damping too weak to give descent; use the gradient
            d[bad] = -Gr[bad]

        dU = d.reshape(C, N, m)
        step = step_memory.copy()
        accepted = np.zeros(C, dtype=bool)
        U_next = U.copy()
        F_next = F.copy()
        for _bt in range(40):
            rem = run & ~accepted
            if not rem.any():
                break
            ridx = np.where(rem)[0]
            U_try = bp.project(
                U[ridx] + step[ridx, None, None] * dU[ridx]
            )
            X_try = bp.model.rollout_batch(bp.x0, U_try)
            F_try, _ = bp.merit(X_try, U_try, bp.S[ridx], lam[ridx],
                                mu[ridx], nu_lo[ridx], nu_hi[ridx],
                                mu_s[ridx])
            dmove = U_try - U[ridx]
            slope = np.einsum("ckm,ckm->c", G[ridx], dmove)
            moved = np.abs(dmove).max(axis=(1, 2)) > 0.0
            ok = moved & (F_try <= F[ridx] + _ARMIJO_SIGMA * slope + 1e-15)
            ok_idx = ridx[ok]
            U_next[ok_idx] = U_try[ok]
            F_next[ok_idx] = F_try[ok]
            accepted[ok_idx] = True
            stalled_idx = ridx[~moved]
            run[stalled_idx] = False  # projection pinned every free coordinate
            step[ridx[~ok & moved]] *= 0.5
        failed = run & ~accepted
        if failed.any():
            reg[failed] = np.maximum(reg[failed] * 100.0, 1e-6)
            run &= ~(failed & (reg >= _REG_MAX))
        reg[accepted] = np.maximum(reg[accepted] * 0.25, _REG_MIN)
        step_memory[accepted] = np.minimum(1.0, step[accepted] * 2.0)
        step_memory[failed] = np.maximum(step_memory[failed] * 0.25, 1e-6)
        # progress below the merit's numerical noise floor means done
        tiny = accepted & (F - F_next <= 1e-12 * (1.0 + np.abs(F)))
        tiny_streak = np.where(tiny, tiny_streak + 1, 0)
        run &= tiny_streak < 3
        if not run.any():
            U = U_next
            break
        U = U_next
        F = F_next
        X = bp.rollout(U)
        F, c = bp.merit(X, U, bp.S, lam, mu, nu_lo, nu_hi, mu_s)
        G = bp.gradient(X, U, c, lam, mu, nu_lo, nu_hi, mu_s)
        if history is not None:
            for ci in range(C):
                if accepted[ci]:
                    history[ci].append(F[ci])
    return U, iters


def solve_fixed_terminal_batch(
    model,
    weights,
    horizon,
    x0,
    terminals,
    q_terms,
    warm_starts=None,
    warm_multipliers=None,
    record_history=False,
    inner_budget=None,
):
    """Solve the fixed-terminal problem for many terminals sharing one x0.

    Returns (plans, infos): ``plans[i]`` is a HorizonPlan or None when the
    terminal is unreachable within tolerance; ``infos[i]`` carries solver
    diagnostics. Results for each candidate are independent of which other
    candidates share the batch.
    """
    N = int(horizon)
    if inner_budget is None:
        inner_budget = _MAX_TOTAL_INNER
    S = np.atleast_2d(np.asarray(terminals, dtype=float))
    C = S.shape[0]
    q_terms = np.broadcast_to(np.asarray(q_terms, dtype=float), (C,))
    bp = _BatchProblem(model, weights, N, x0, S)

    if warm_starts is None:
        U = np.tile(model.u_eq, (C, N, 1))
    else:
        U = np.array(warm_starts, dtype=float).reshape(C, N, model.m)
    U = bp.project(U)
    if warm_multipliers is None:
        lam = np.zeros((C, model.n))
    else:
        lam = np.array(warm_multipliers, dtype=float).reshape(C, model.n)
    mu = np.full(C, _MU0)
    nu_lo = np.zeros((C, N, model.n))
    nu_hi = np.zeros((C, N, model.n))
    mu_s = np.full(C, _MU0)

    history = [[] for _ in range(C)] if record_history else None
    active = np.ones(C, dtype=bool)
    done = np.zeros(C, dtype=bool)
    res = np.full(C, np.inf)
    sviol = np.zeros(C)
    prev_res = np.full(C, np.inf)
    no_progress = np.zeros(C, dtype=int)
    total_inner = np.zeros(C, dtype=int)
    outer_used = np.zeros(C, dtype=int)

    def bound_violation(X):
        if not bp.has_state_bounds:
            return np.zeros(C)
        g = np.maximum(bp.x_lo - X[:, 1:, :], X[:, 1:, :] - bp.x_hi)
        return np.maximum(g.max(axis=(1, 2)), 0.0)

    for _outer in range(_MAX_OUTER):
        U, iters = _inner_minimize(
            bp, U, lam, mu, nu_lo, nu_hi, mu_s, active, history
        )
        total_inner += iters
        outer_used += active
        X = bp.rollout(U)
        c = X[:, -1, :] - S
        res = np.linalg.norm(c, axis=1)
        sviol = bound_violation(X)
        ok = (res <= _RES_TARGET) & (sviol <= BOUND_TOL)
        done |= active & ok
        active &= ~ok
        # residuals far from tolerance that have all but stopped shrinking
        # mark an unreachable terminal: stop working on it
        far = res > 100.0 * TERMINAL_TOL
        stag = active & (
            (far & (res > 0.8 * prev_res))
            | (far & (_outer >= 8))
            | ((mu >= 1e6) & (res > 0.5 * prev_res))
        )
        no_progress = np.where(stag, no_progress + 1, 0)
        active &= no_progress < 2
        active &= total_inner < inner_budget
        if not active.any():
            break
        lam[active] += mu[active, None] * c[active]
        stall = active & (res > 0.25 * prev_res)
        mu[stall] = np.minimum(mu[stall] * _MU_GROWTH, _MU_MAX)
        if bp.has_state_bounds:
            nu_lo[active] = np.maximum(
                0.0,
                nu_lo[active]
                + mu_s[active, None, None] * (bp.x_lo - X[active][:, 1:, :]),
            )
            nu_hi[active] = np.maximum(
                0.0,
                nu_hi[active]
                + mu_s[active, None, None] * (X[active][:, 1:, :] - bp.x_hi),
            )
            mu_s[stall] = np.minimum(mu_s[stall] * _MU_GROWTH, _MU_MAX)
        prev_res = res.copy()

    # accept anything inside the declared tolerances, even if the polish
    # target was not reached within the budget
    X = bp.rollout(U)
    c = X[:, -1, :] - S
    res = np.linalg.norm(c, axis=1)
    sviol = bound_violation(X)
    feasible = (res <= TERMINAL_TOL) & (sviol <= BOUND_TOL)

    dx = X[:, :-1, :] - S[:, None, :]
    ell = (
        np.einsum("ckn,n,ckn->ck", dx, bp.p, dx)
        + np.einsum("ckm,m,ckm->ck", U, bp.r, U)
    )
    plans = []
    infos = []
    for i in range(C):
        info = SolveInfo(
            converged=bool(feasible[i]),
            outer_iterations=int(outer_used[i]),
            inner_iterations=int(total_inner[i]),
            terminal_residual=float(res[i]),
            bound_violation=float(sviol[i]),
            merit_history=history[i] if record_history else [],
            multipliers=lam[i].copy(),
            inputs=U[i].copy(),
        )
        infos.append(info)
        if not feasible[i]:
            plans.append(None)
            continue
        plans.append(
            HorizonPlan(
                states=X[i].copy(),
                inputs=U[i].copy(),
                ell_values=ell[i].copy(),
                j_model=float(ell[i].sum() + (N + 1) * q_terms[i]),
                q_term=float(q_terms[i]),
                terminal_residual=float(res[i]),
                defect=0.0,
            )
        )
    return plans, infos


def solve_fixed_terminal(problem: FixedTerminalProblem, warm_start=None,
                         record_history=False):
    """Solve a single fixed-terminal problem.

    Returns a HorizonPlan, or None when the terminal is unreachable within
    tolerance (a normal outcome, not an error). Deterministic for identical
    inputs and warm start.
    """
    plan, info = solve_fixed_terminal_single(problem, warm_start,
                                             record_history)
    return plan


def solve_fixed_terminal_single(problem: FixedTerminalProblem,
                                warm_start=None, record_history=False):
    """Like :func:`solve_fixed_terminal` but also returns diagnostics."""
    warm = None
    if warm_start is not None:
        U0 = warm_start.inputs if isinstance(warm_start, HorizonPlan) else warm_start
        warm = np.asarray(U0, dtype=float)[None]
    plans, infos = solve_fixed_terminal_batch(
        problem.model,
        problem.weights,
        problem.horizon,
        problem.x0,
        problem.terminal[None],
        np.array([problem.q_term]),
        warm_starts=warm,
        record_history=record_history,
    )
    return plans[0], infos[0]


def plan_defect(model: SystemModel, plan: HorizonPlan) -> float:
    """Max re-simulation residual of a plan under the true dynamics."""
    worst = 0.0
    for k in range(plan.horizon()):
        pred = model.step(plan.states[k], plan.inputs[k])
        worst = max(worst, float(np.max(np.abs(pred - plan.states[k + 1]))))
    return worst
