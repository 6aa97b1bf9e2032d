"""Gain tuning for a bidirectional cruise-control platoon.

The controller, integrator and gain optimizer live in ``dynamics``,
``simulation`` and ``gainopt``; ``surrogate`` learns the optimizer's answer and
``merge`` exercises it in an on-ramp scenario.
"""

from .dynamics import (
    DomainError,
    PlatoonSizeError,
    PlatoonState,
    feedback,
    gain_g,
    gains_k,
    in_state_space,
    kernel_f,
    potential,
    potential_deriv,
)
from .gainopt import GainSolution, dense_grid_oracle, evaluate_mu, optimize_mu, optimize_mu_batch
from .params import ControllerParams, ICRanges, OptConfig, SimConfig, SpacingPolicy
from .simulation import (
    RolloutResult,
    SimulationError,
    Trajectory,
    accel_cost,
    peak_accel,
    read_trajectory_csv,
    rollout,
    simulate,
    spacing_feasible,
    step_rk4,
    write_trajectory_csv,
)

__version__ = "0.1.0"
