"""Age-gain threshold slotted ALOHA: simulator, Markov model, and search.

Devices share one collision channel to keep a receiver's copy of their
state fresh.  Each transmits only when the age gain (receiver-side age
minus local age of the newest update) clears a threshold, which
concentrates contention on the devices whose delivery would help most.
The package provides a slot-level simulator of the transmission schemes,
an analytic model of the fixed-parameter scheme, an offline parameter
search, and a benchmark harness.
"""

__version__ = "0.1.0"

from .analytic import (
    ExternalChainSolution,
    ExternalChainSpec,
    FixedPointError,
    TruncationError,
    network_aaoi,
    solve_auto,
    solve_fixed_point,
)
from .bench import BUILTIN_SCENARIOS, Scenario, emit_plotdata, run_scenario
from .core import (
    ChannelStatus,
    DeviceState,
    NetworkConfig,
    SlotIndex,
    aaoi_lower_bound,
    age_gain,
    resolve_channel,
)
from .estimator import EnhancedPolicy, SharedEstimator
from .policies import (
    AccessParams,
    AlohaGamma1Policy,
    AoiThresholdPolicy,
    BasicParams,
    BasicPolicy,
    IdealAdaptivePolicy,
    IdealSchedulingPolicy,
)
from .search import SearchResult, SearchSpec, optimize_basic, optimize_p_given_gamma
from .simkit import EpisodeResult, SimConfig, SimResult, run_episode, run_experiment

__all__ = [
    "__version__",
    "AccessParams",
    "AlohaGamma1Policy",
    "AoiThresholdPolicy",
    "BasicParams",
    "BasicPolicy",
    "BUILTIN_SCENARIOS",
    "ChannelStatus",
    "DeviceState",
    "EnhancedPolicy",
    "EpisodeResult",
    "ExternalChainSolution",
    "ExternalChainSpec",
    "FixedPointError",
    "IdealAdaptivePolicy",
    "IdealSchedulingPolicy",
    "NetworkConfig",
    "Scenario",
    "SearchResult",
    "SearchSpec",
    "SharedEstimator",
    "SimConfig",
    "SimResult",
    "SlotIndex",
    "TruncationError",
    "aaoi_lower_bound",
    "age_gain",
    "emit_plotdata",
    "network_aaoi",
    "optimize_basic",
    "optimize_p_given_gamma",
    "resolve_channel",
    "run_episode",
    "run_experiment",
    "run_scenario",
    "solve_auto",
    "solve_fixed_point",
]
