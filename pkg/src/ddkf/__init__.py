"""Data-driven Kalman filtering and control from pre-collected trajectories."""

__version__ = "0.1.0"

from .control import (
    ControllerGain,
    average_cost,
    construct_QK_via_lqr,
    dare_solve,
    dynamic_gain,
    lmi_feasible,
    lqg_gain,
    simulate_closed_loop,
    static_gain,
)
from .data import TrajectoryBatch, collect_batch, load_batch, persistent_excitation_check, save_batch
from .errors import (
    AssumptionViolation,
    BatchParseError,
    ConstraintInfeasible,
    ConvergenceError,
    CovarianceError,
    DDKFError,
    DimensionError,
    FilterDivergence,
    InstabilityError,
    SingularityError,
)
from .filtering import (
    FilterState,
    SteadyRiccati,
    batch_mmse_oracle,
    kf_init,
    kf_step,
    run_filter,
    steady_state_riccati,
)
from .identification import IdentifiedModel, identification_error, identify
from .system import LtiSystem, dc_motor_preset, simulate_step, simulate_trajectory
