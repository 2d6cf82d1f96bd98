"""Ground-truth references computed by independent methods.

These back the verification suites: a dense KKT solve of the
equality-constrained quadratic problem for linear systems, and brute-force
terminal enumeration that queries the black box for every feasible
candidate. They deliberately avoid the iterative shooting solver's descent
machinery (the KKT path) and its lazy query protocol (the enumeration
path).
"""

from __future__ import annotations

import numpy as np

from .costs import CostWeights
from .dynamics import LinearSystem

__all__ = [
    "prediction_matrices",
    "solve_fixed_terminal_kkt",
    "full_horizon_cost_kkt",
    "min_full_horizon_cost",
]


def prediction_matrices(A, B, N):
    """Stacked maps Phi, Gamma with X = Phi @ x0 + Gamma @ u_vec.

    Row blocks cover states 0..N; Gamma has shape ((N+1)*n, N*m).
    """
    n, m = B.shape
    Phi = np.zeros(((N + 1) * n, n))
    Gamma = np.zeros(((N + 1) * n, N * m))
    Ak = np.eye(n)
    Phi[0:n] = Ak
    for k in range(1, N + 1):
        Ak = A @ Ak
        Phi[k * n:(k + 1) * n] = Ak
        for j in range(k):
            blk = np.linalg.matrix_power(A, k - 1 - j) @ B
            Gamma[k * n:(k + 1) * n, j * m:(j + 1) * m] = blk
    return Phi, Gamma


def _quadratic_data(model, weights, N, x0, reference, q_extra):
    """Quadratic objective in input space for terminal-pinned problems.

    Stage cost sums (x_k - reference)' P (x_k - reference) + u_k' R u_k for
    k = 0..N-1, plus the constant ``q_extra``.
    """
    n, m = model.n, model.m
    Phi, Gamma = prediction_matrices(model.A, model.B, N)
    rows = slice(0, N * n)  # states 0..N-1 carry stage cost
    Phi_s = Phi[rows]
    Gamma_s = Gamma[rows]
    P_big = np.kron(np.eye(N), np.diag(weights.p_diag))
    R_big = np.kron(np.eye(N), np.diag(weights.r_diag))
    e0 = Phi_s @ x0 - np.tile(reference, N)
    H = 2.0 * (Gamma_s.T @ P_big @ Gamma_s + R_big)
    g = 2.0 * Gamma_s.T @ P_big @ e0
    const = float(e0 @ P_big @ e0) + q_extra
    # terminal rows
    A_eq = Gamma[N * n:(N + 1) * n]
    b_eq = None  # filled by caller (depends on the pinned terminal)
    return H, g, const, A_eq, Phi[N * n:(N + 1) * n]


def _solve_kkt(H, g, A_eq, b_eq):
    nv = H.shape[0]
    nc = A_eq.shape[0]
    K = np.zeros((nv + nc, nv + nc))
    K[:nv, :nv] = H
    K[:nv, nv:] = A_eq.T
    K[nv:, :nv] = A_eq
    rhs = np.concatenate([-g, b_eq])
    sol = np.linalg.solve(K, rhs)
    return sol[:nv]


def solve_fixed_terminal_kkt(model: LinearSystem, weights: CostWeights,
                             horizon: int, x0, terminal, q_term=0.0):
    """Exact fixed-terminal solution for a linear system, ignoring bounds.

    Returns (inputs (N, m), states (N+1, n), cost) where the cost includes
    the (N+1) * q_term compensation. Dense linear algebra only.
    """
    x0 = np.asarray(x0, dtype=float)
    s = np.asarray(terminal, dtype=float)
    N = int(horizon)
    H, g, const, A_eq, Phi_N = _quadratic_data(
        model, weights, N, x0, s, (N + 1) * float(q_term)
    )
    b_eq = s - Phi_N @ x0
    u = _solve_kkt(H, g, A_eq, b_eq)
    cost = 0.5 * u @ H @ u + g @ u + const
    U = u.reshape(N, model.m)
    X = np.empty((N + 1, model.n))
    X[0] = x0
    for k in range(N):
        X[k + 1] = model.A @ X[k] + model.B @ U[k]
    return U, X, float(cost)


def full_horizon_cost_kkt(model: LinearSystem, weights: CostWeights,
                          T: int, x_start, x_goal):
    """Optimal cost of reaching the goal exactly in T steps.

    Minimizes the goal-referenced stage cost over the whole horizon with the
    final state pinned to the goal; one dense KKT solve.
    """
    x_start = np.asarray(x_start, dtype=float)
    x_goal = np.asarray(x_goal, dtype=float)
    T = int(T)
    H, g, const, A_eq, Phi_T = _quadratic_data(
        model, weights, T, x_start, x_goal, 0.0
    )
    b_eq = x_goal - Phi_T @ x_start
    try:
        u = _solve_kkt(H, g, A_eq, b_eq)
    except np.linalg.LinAlgError:
        return np.inf
    if not np.all(np.isfinite(u)):
        return np.inf
    return float(0.5 * u @ H @ u + g @ u + const)


def min_full_horizon_cost(model, weights, x_start, x_goal, t_max, t_min=1):
    """Best exact-arrival cost over horizons t_min..t_max."""
    best = np.inf
    for T in range(int(t_min), int(t_max) + 1):
        best = min(best, full_horizon_cost_kkt(model, weights, T,
                                               x_start, x_goal))
    return best
