"""Decentralized water-level balancing for irrigation channels.

Models pool hydraulics from first principles, linearizes them in the
frequency domain, auto-tunes one PI compensator per gate by sequential loop
shaping, audits the result (Nyquist, closed-form integrator gains), and
replays the design against the nonlinear channel under supply-demand
mismatch.
"""

from .compensator import CompensatorParams
from .errors import (
    BoundarySingularityError,
    CFLError,
    ConfigError,
    InfeasibleDesignError,
    MarginalStabilityError,
    NumericalError,
    PoolBalanceError,
    TranscriticalError,
)
from .freqdom import (
    FrequencyGrid,
    FrequencyResponse,
    PoolFrequencyResponse,
    default_grid,
    linearize_pool,
    pool_frequency_response,
    transition_matrices,
    two_point_integrator_gain,
)
from .hydraulics import PoolParams, SteadyProfile, solve_steady_profile
from .network import (
    ChannelLinearModel,
    assemble_channel,
    close_one_loop,
    closed_loop_disturbance_gain,
    closed_loop_level_response,
    closed_form_step_gain,
    open_partial,
)
from .runtime import (
    FeedforwardGains,
    GateController,
    Scenario,
    SimulationResult,
    geometric_feedforward,
    run_closed_loop,
    weighted_outputs,
)
from .scenarios import (
    BalancedEquilibriumCurve,
    ChannelConfig,
    balanced_equilibrium_map,
    build_linear_channel,
    load_config,
    make_standard_scenario,
    make_tapered_channel,
    make_uniform_channel,
    parse_config,
    serialize_config,
)
from .svsim import BoundaryFlows, ChannelState, advance, initial_state, step_channel
from .tuner import (
    DesignResult,
    LoopReport,
    TunerOptions,
    design_all,
    nyquist_encirclements,
    tune_step,
)

__version__ = "0.1.0"

__all__ = [
    "BalancedEquilibriumCurve",
    "BoundaryFlows",
    "BoundarySingularityError",
    "CFLError",
    "ChannelConfig",
    "ChannelLinearModel",
    "ChannelState",
    "CompensatorParams",
    "ConfigError",
    "DesignResult",
    "FeedforwardGains",
    "FrequencyGrid",
    "FrequencyResponse",
    "GateController",
    "InfeasibleDesignError",
    "LoopReport",
    "MarginalStabilityError",
    "NumericalError",
    "PoolBalanceError",
    "PoolFrequencyResponse",
    "PoolParams",
    "Scenario",
    "SimulationResult",
    "SteadyProfile",
    "TranscriticalError",
    "TunerOptions",
    "advance",
    "assemble_channel",
    "balanced_equilibrium_map",
    "build_linear_channel",
    "close_one_loop",
    "closed_loop_disturbance_gain",
    "closed_loop_level_response",
    "default_grid",
    "design_all",
    "geometric_feedforward",
    "initial_state",
    "closed_form_step_gain",
    "linearize_pool",
    "load_config",
    "make_standard_scenario",
    "make_tapered_channel",
    "make_uniform_channel",
    "nyquist_encirclements",
    "open_partial",
    "parse_config",
    "pool_frequency_response",
    "run_closed_loop",
    "serialize_config",
    "solve_steady_profile",
    "step_channel",
    "transition_matrices",
    "tune_step",
    "two_point_integrator_gain",
    "weighted_outputs",
]
