"""Dynamic loss balancing across scale levels: variance-driven weighting and a bandit controller."""

from .ledger import (
    EPSILON,
    IntervalStats,
    LedgerError,
    LossTrace,
    WeightVector,
    compute_interval_stats,
    interval_loss,
    interval_variance,
    record_loss,
    variance_reduction_rate,
    weighted_total,
)
from .policy import (
    ControllerState,
    Mode,
    Policy,
    RloState,
    StepReport,
    brelu,
    compute_reward,
    controller_step,
    sample_action,
    update_policy,
)
from .rng import controller_rng
from .weighting import Action, SelectionConfig, apply_action, select_levels

__version__ = "0.1.0"
