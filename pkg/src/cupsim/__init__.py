"""cupsim: exact-arithmetic cup-game simulator and adversarial benchmark harness."""

from .core import (
    GameConfig,
    InvalidConfigError,
    InvalidMoveError,
    InvariantViolationError,
    NegativeAmountError,
    NonRepresentableError,
    Rational,
    RngStream,
    SetupError,
    StrategyProtocolError,
    Variant,
    WaterAmount,
    choose_resolution,
    to_units,
    uniform_threshold,
    validate_config,
)
from .games import (
    EmptierMove,
    FillerMove,
    GameState,
    StepRecord,
    backlog,
    new_game,
    read_trace,
    step,
    validate_emptier_move,
    validate_filler_move,
    write_trace,
)
from .emptiers import make_emptier
from .fillers import make_filler
from .harness import (
    ExperimentResult,
    ExperimentSpec,
    run_experiment,
    run_trial,
    spec_from_json,
    spec_to_json,
)
from .metrics import (
    TraceSummary,
    avg_top,
    backlog_witness_exists,
    integer_fill,
    potential_phi,
    summarize,
)
from .thresholds import ThresholdState, surplus_of_step

__version__ = "0.1.0"

__all__ = [
    "EmptierMove",
    "ExperimentResult",
    "ExperimentSpec",
    "FillerMove",
    "GameConfig",
    "GameState",
    "InvalidConfigError",
    "InvalidMoveError",
    "InvariantViolationError",
    "NegativeAmountError",
    "NonRepresentableError",
    "Rational",
    "RngStream",
    "SetupError",
    "StepRecord",
    "StrategyProtocolError",
    "ThresholdState",
    "TraceSummary",
    "Variant",
    "WaterAmount",
    "avg_top",
    "backlog",
    "backlog_witness_exists",
    "choose_resolution",
    "integer_fill",
    "make_emptier",
    "make_filler",
    "new_game",
    "potential_phi",
    "read_trace",
    "run_experiment",
    "run_trial",
    "spec_from_json",
    "spec_to_json",
    "step",
    "summarize",
    "surplus_of_step",
    "to_units",
    "uniform_threshold",
    "validate_config",
    "validate_emptier_move",
    "validate_filler_move",
    "write_trace",
]
