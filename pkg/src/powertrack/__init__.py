"""Distributed power control tracking over finite-state Markov fading channels."""

from .channel import (
    ChannelTrace,
    FsmcSpec,
    ScalarChain,
    average_sojourn_time,
    build_fsmc_spec,
    build_scalar_chain,
    enumerate_joint_states,
    epsilon_for_sojourn,
    sample_trace,
    sojourn_pmf,
    step_chain,
)
from .game import NeSolution, solve_ne, uniqueness_condition, waterfill
from .power_control import (
    ADAPTIVE_DIAGONAL,
    CONSTANT_STEP,
    FROZEN_DIAGONAL,
    FULL_MATRIX,
    POLICY_KINDS,
    ScalingPolicy,
    TrackingTrace,
    optimal_scaling,
    run_tracking,
    run_tracking_batch,
)
from .analysis import (
    ErrorBounds,
    StageRecord,
    block_max_norm,
    contraction_modulus,
    dominated_error_process,
    theoretical_bounds,
    tracking_errors,
)
from .config import ExperimentConfig, load_config
