"""Monte Carlo engine for the two-memory preparation sequence."""

from .engine import (
    ProtocolConfig,
    RatePoint,
    RunResult,
    TrialLog,
    TrialRecord,
    closed_form_rate,
    coincidence_rate_curve,
    conditional_state,
    expected_attempts,
    run_sessions,
)
from .tally import MeasurementTally, merge_tallies, tallies_from_csv, tallies_to_csv

__all__ = [
    "MeasurementTally",
    "ProtocolConfig",
    "RatePoint",
    "RunResult",
    "TrialLog",
    "TrialRecord",
    "closed_form_rate",
    "coincidence_rate_curve",
    "conditional_state",
    "expected_attempts",
    "merge_tallies",
    "run_sessions",
    "tallies_from_csv",
    "tallies_to_csv",
]
