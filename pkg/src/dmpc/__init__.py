"""Predictive control with a known model cost and a black-box stage cost."""

from .blackbox import (
    DiscBarrierField,
    GaussianBumpField,
    Predictor,
    RegionPenaltyField,
    ZeroPredictor,
    build_predictor,
)
from .costs import (
    INFINITE_COST,
    CostWeights,
    StageCostRecord,
    barrier_transform,
    known_stage_cost,
    terminal_stage_cost,
    trajectory_overall_cost,
)
from .dynamics import (
    BicycleParams,
    KinematicBicycle,
    LinearSystem,
    SystemModel,
    bicycle_slip_angle,
    double_integrator,
    is_at_equilibrium,
    wrap_angle,
)
from .engine import (
    ConvergenceReport,
    DmpcConfig,
    NoFeasibleCandidate,
    SafeSet,
    StepLimitExceeded,
    Trajectory,
    build_safe_set,
    compute_cost_to_go,
    dmpc_step,
    run,
    run_iteration,
    select_terminal_enumerate,
    select_terminal_lazy,
    shifted_plan,
    trajectory_difference,
    validate_trajectory,
)
from .trajopt import (
    FixedTerminalProblem,
    HorizonPlan,
    solve_fixed_terminal,
    solve_fixed_terminal_batch,
)

__version__ = "0.1.0"
