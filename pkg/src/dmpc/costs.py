"""Known stage costs, trajectory cost accounting, and the barrier transform.

``INFINITE_COST`` is the sentinel for "infeasible as a cost": it propagates
through sums and comparisons (any finite cost beats it) instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "INFINITE_COST",
    "CostWeights",
    "StageCostRecord",
    "known_stage_cost",
    "terminal_stage_cost",
    "barrier_transform",
    "trajectory_overall_cost",
]

INFINITE_COST = math.inf


@dataclass(frozen=True)
class CostWeights:
    """Diagonal quadratic weights on the state error and the input."""

    p_diag: np.ndarray
    r_diag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_diag", np.asarray(self.p_diag, dtype=float))
        object.__setattr__(self, "r_diag", np.asarray(self.r_diag, dtype=float))
        if self.p_diag.ndim != 1 or self.r_diag.ndim != 1:
            raise ValueError("weights must be diagonal vectors")
        if np.any(self.p_diag < 0) or np.any(self.r_diag < 0):
            raise ValueError("weights must be non-negative")
        if not np.any(self.p_diag > 0):
            raise ValueError("at least one state weight must be positive")


@dataclass(frozen=True)
class StageCostRecord:
    """Realized stage costs of one step: known part and black-box part."""

    h_val: float
    z_val: float

    def __post_init__(self):
        if self.h_val < 0 or self.z_val < 0 or math.isnan(self.z_val):
            raise ValueError("stage costs must be non-negative")


def _quad(err, u, weights):
    err = np.asarray(err, dtype=float)
    u = np.asarray(u, dtype=float)
    if err.shape != weights.p_diag.shape:
        raise ValueError("state dimension does not match the weights")
    if u.shape != weights.r_diag.shape:
        raise ValueError("input dimension does not match the weights")
    return float(err @ (weights.p_diag * err) + u @ (weights.r_diag * u))


def known_stage_cost(x, u, x_goal, weights: CostWeights) -> float:
    """Quadratic stage cost referenced to the goal state."""
    return _quad(np.asarray(x, dtype=float) - np.asarray(x_goal, dtype=float),
                 u, weights)


def terminal_stage_cost(x, u, x_term, weights: CostWeights) -> float:
    """Same quadratic form, referenced to the selected terminal state."""
    return _quad(np.asarray(x, dtype=float) - np.asarray(x_term, dtype=float),
                 u, weights)


def barrier_transform(y_val: float) -> float:
    """Map a constraint value y <= 0 into an unbounded penalty.

    Strictly feasible values (y < 0) give -1/y; anything else gives the
    infinite sentinel, encoding the violation as cost rather than an error.
    """
    if y_val < 0:
        return -1.0 / y_val
    return INFINITE_COST


def trajectory_overall_cost(traj) -> float:
    """Sum of known plus black-box stage costs over a realized trajectory.

    Accepts any object carrying aligned ``stage_h``/``stage_z`` arrays (one
    entry per applied input).
    """
    h = traj.stage_h
    z = traj.stage_z
    if h is None or z is None:
        raise ValueError("trajectory is missing stage cost records")
    h = np.asarray(h, dtype=float)
    z = np.asarray(z, dtype=float)
    n_inputs = len(traj.inputs)
    if h.shape != (n_inputs,) or z.shape != (n_inputs,):
        raise ValueError("stage cost records are not aligned with inputs")
    return float(np.sum(h) + np.sum(z))
