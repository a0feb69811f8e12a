"""Queue-aware MIMO precoding and power control for delay-sensitive streams.

The package solves the average-cost queue MDP for ``L`` spatial streams
over a MIMO link, either jointly (relative value iteration) or per stream
under static eigenmode sorting, analyzes the resulting queue chains and
simulates them against channel-only and time-sharing baselines.
"""

__version__ = "0.1.0"

from .errors import (CalibrationRangeError, ConfigError, NumericalError, RegimeError,
                     StateSpaceTooLarge)
from .phy import (ChannelSample, EigenSampleCache, PhyConfig, alpha_from_ser, mse_matrix,
                  rate_per_stream, sample_channel, service_rate)
from .model import ChainParams, ControlAction, StateSpace, StreamProfile
from .waterfill import (PhiResult, WaterfillParams, phi, phi_1d, sort_assignment,
                        waterfill_power)
from .mdp_full import FullSolution, bellman_backup, extract_action, solve_rvi
from .decomposed import (StreamSolution, decomposed_policy, forward_recursion, solve_decomposed,
                         solve_theta)
from .steady import SteadyState, steady_state_full, steady_state_per_stream
from .calibrate import CalibrationResult, calibrate_gamma
from .policies import PolicyHandle, csit_only_policy, round_robin_policy
from .simulator import SimReport, run_sim

__all__ = [
    "__version__",
    "CalibrationRangeError",
    "ConfigError",
    "NumericalError",
    "StateSpaceTooLarge",
    "ChannelSample",
    "EigenSampleCache",
    "PhyConfig",
    "alpha_from_ser",
    "mse_matrix",
    "ChainParams",
    "ControlAction",
    "StateSpace",
    "StreamProfile",
    "PhiResult",
    "WaterfillParams",
    "phi",
    "phi_1d",
    "sort_assignment",
    "FullSolution",
    "bellman_backup",
    "extract_action",
    "solve_rvi",
    "StreamSolution",
    "decomposed_policy",
    "forward_recursion",
    "solve_decomposed",
    "SteadyState",
    "steady_state_full",
    "steady_state_per_stream",
    "CalibrationResult",
    "calibrate_gamma",
    "PolicyHandle",
    "csit_only_policy",
    "round_robin_policy",
    "SimReport",
    "run_sim",
    "rate_per_stream",
    "sample_channel",
    "service_rate",
    "waterfill_power",
    "solve_theta",
    "RegimeError",
]
