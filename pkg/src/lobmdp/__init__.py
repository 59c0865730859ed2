"""Event-time order-book modeling, order-placement optimization, simulation."""

from .events import (
    BookState,
    L1Event,
    OrderType,
    ReducedState,
    StreamFormatError,
    discretize,
    filter_session,
    imbalance,
    normalize_volumes,
    parse_stream,
    serialize,
)
from .fixtures import build_fixture_model
from .flow import (
    FlowEstimator,
    FlowModel,
    GlrtResult,
    estimate_flow,
    glrt,
    recover_intensities,
)
from .lobsim import SimEvent, SimPath, depletion_refill, simulate, simulate_events, step
from .mdp import (
    Action,
    ConvergenceError,
    MdpSpec,
    Policy,
    ValueFunction,
    bellman_residual,
    build_mdp,
    dynamic_value_iteration,
    extract_policy,
    policy_regions,
    reward,
    value_iteration,
)
from .strategies import SimResult, comparison_table, run_simulation, solve_variant

__version__ = "0.1.0"
