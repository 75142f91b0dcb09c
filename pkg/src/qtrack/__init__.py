"""Quantile tracking for nonstationary streams with step sizes chosen by an
online estimate of the tracking MSE."""

from .controllers import (
    FixedState, HilConfig, HilState, OracleConfig, OracleState, default_grid, hil_rebalance,
    hil_step, oracle_extend, oracle_select, oracle_step,
)
from .estimators import EstimatorKind, EstimatorState, dumique_update, frugal_update, update
from .mse_tracking import (
    MseTracker, SmoothingParams, TrackedQuantile, default_q_tilde, is_warm, mse_estimate,
    rule_of_thumb, tracked_step, update_bias, update_gprime, update_mean_var,
)

__all__ = [
    "EstimatorKind", "EstimatorState", "dumique_update", "frugal_update", "update",
    "MseTracker", "SmoothingParams", "TrackedQuantile", "default_q_tilde", "is_warm", "mse_estimate",
    "rule_of_thumb", "tracked_step", "update_bias", "update_gprime", "update_mean_var",
    "FixedState", "HilConfig", "HilState", "OracleConfig", "OracleState", "default_grid",
    "hil_rebalance", "hil_step", "oracle_extend", "oracle_select", "oracle_step",
]
