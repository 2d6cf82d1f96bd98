"""Shipped experiment configurations.

``bicycle_benchmark`` is the headline motion-planning task: steer the
kinematic bicycle across an unknown cost field from a standstill into a
moving goal state. The double-integrator scenarios back the randomized
verification suites.
"""

from __future__ import annotations

import numpy as np

from .harness import ExperimentConfig

__all__ = [
    "bicycle_benchmark_config",
    "double_integrator_config",
    "random_double_integrator_config",
    "get_scenario",
    "SCENARIOS",
]


def bicycle_benchmark_config(output_dir=None, seed=0) -> ExperimentConfig:
    """Vehicle benchmark: N=12, dt=0.5 s, start [0, 5, pi/2, 0], goal
    [51, 10, pi/10, 1.1], with three cost bumps near the direct corridor."""
    return ExperimentConfig(
        scenario="bicycle_benchmark",
        model={
            "type": "kinematic_bicycle",
            "l_f": 1.1,
            "l_r": 1.6,
            "dt": 0.5,
            "v_max": 4.0,
            "delta_max": np.pi / 7,
            "a_max": 1.0,
        },
        p_diag=[1.0, 1.0, 0.1, 0.1],
        r_diag=[0.01, 0.01],
        x_start=[0.0, 5.0, np.pi / 2, 0.0],
        x_goal=[51.0, 10.0, np.pi / 10, 1.1],
        horizon=12,
        convergence_eps=1e-4,
        equilibrium_tol=0.15,
        max_steps_per_iteration=300,
        max_iterations=10,
        predictor={
            "type": "gaussian_bumps",
            "bumps": [
                [14.0, 8.0, 7.0, 3.0],
                [27.0, 9.5, 6.0, 3.5],
                [38.0, 7.5, 5.0, 2.5],
            ],
        },
        seed=seed,
        output_dir=output_dir,
    )


def double_integrator_config(output_dir=None, seed=0, bumps=None,
                             x_start=(-4.0, 0.0)) -> ExperimentConfig:
    """Point-mass task: drive position and velocity to the origin."""
    dt = 0.5
    return ExperimentConfig(
        scenario="double_integrator",
        model={
            "type": "linear",
            "A": [[1.0, dt], [0.0, 1.0]],
            "B": [[0.0], [dt]],
            "dt": dt,
            "u_lo": [-1.0],
            "u_hi": [1.0],
        },
        p_diag=[1.0, 0.5],
        r_diag=[0.1],
        x_start=list(x_start),
        x_goal=[0.0, 0.0],
        horizon=6,
        convergence_eps=1e-4,
        equilibrium_tol=1e-3,
        max_steps_per_iteration=200,
        max_iterations=10,
        predictor=(
            {"type": "zero"} if bumps is None
            else {"type": "gaussian_bumps", "bumps": bumps,
                  "position_indices": [0, 1]}
        ),
        seed=seed,
        output_dir=output_dir,
    )


def random_double_integrator_config(seed, output_dir=None) -> ExperimentConfig:
    """Seeded random task: random start state and random bump field."""
    rng = np.random.default_rng(seed)
    x_start = [float(rng.uniform(-6.0, -2.5)), float(rng.uniform(-0.5, 0.5))]
    n_bumps = int(rng.integers(1, 4))
    bumps = []
    for _ in range(n_bumps):
        bumps.append([
            float(rng.uniform(-4.0, -0.5)),   # center along the travel axis
            float(rng.uniform(-1.0, 1.0)),    # center in the velocity axis
            float(rng.uniform(0.5, 4.0)),     # amplitude
            float(rng.uniform(0.5, 1.5)),     # length scale
        ])
    cfg = double_integrator_config(output_dir=output_dir, seed=seed,
                                   bumps=bumps, x_start=x_start)
    return cfg


SCENARIOS = {
    "bicycle_benchmark": bicycle_benchmark_config,
    "double_integrator": double_integrator_config,
}


def get_scenario(name: str, output_dir=None, seed=0) -> ExperimentConfig:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; "
                       f"available: {sorted(SCENARIOS)}")
    return SCENARIOS[name](output_dir=output_dir, seed=seed)
