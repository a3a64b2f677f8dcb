"""The four weight-update actions.

``A0`` is adaptive variance weighting: boost the levels whose interval
variance dropped fastest. ``A1``/``A2`` boost the levels with the smallest /
largest interval loss and ``A3`` resets every weight to 1.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

from .ledger import IntervalStats, WeightVector


class Action(enum.IntEnum):
    A0_MAX_VARIANCE_REDUCTION = 0
    A1_MIN_INTERVAL_LOSS = 1
    A2_MAX_INTERVAL_LOSS = 2
    A3_RESET_TO_ONE = 3

    @property
    def label(self) -> str:
        return f"a{int(self)}"

    @classmethod
    def from_label(cls, label: str) -> Action:
        label = label.strip().lower()
        for action in cls:
            if action.label == label:
                return action
        raise ValueError(f"unknown action {label!r}; expected one of a0, a1, a2, a3")


@dataclass(frozen=True)
class SelectionConfig:
    num_selected: int = 2
    lambda_primary: float = 1.5
    lambda_secondary: float = 1.0

    def __post_init__(self) -> None:
        if self.num_selected < 1:
            raise ValueError(f"num_selected must be >= 1, got {self.num_selected}")
        if not self.lambda_primary >= self.lambda_secondary > 0:
            raise ValueError(
                "need lambda_primary >= lambda_secondary > 0, got "
                f"{self.lambda_primary}, {self.lambda_secondary}"
            )

    def check_levels(self, num_levels: int) -> None:
        if self.num_selected > num_levels:
            raise ValueError(
                f"num_selected={self.num_selected} exceeds the number of levels ({num_levels})"
            )


def select_levels(action: Action, stats: IntervalStats, config: SelectionConfig) -> list[int]:
    """Levels boosted by ``action``, most extreme first.

    Ties go to the lower level index.
    """
    config.check_levels(stats.num_levels)
    levels = range(stats.num_levels)
    if action is Action.A0_MAX_VARIANCE_REDUCTION:
        order = sorted(levels, key=lambda i: (-stats.reduction_rate[i], i))
    elif action is Action.A1_MIN_INTERVAL_LOSS:
        order = sorted(levels, key=lambda i: (stats.interval_loss[i], i))
    elif action is Action.A2_MAX_INTERVAL_LOSS:
        order = sorted(levels, key=lambda i: (-stats.interval_loss[i], i))
    else:
        return []
    return order[: config.num_selected]


def apply_action(action: Action, stats: IntervalStats, config: SelectionConfig) -> WeightVector:
    """Weights for the next interval, recomputed from scratch.

    Each selected level ``j`` gets ``1 + lam * L_j / sum(L)`` where ``lam`` is
    ``lambda_primary`` for the first-ranked level and ``lambda_secondary``
    for the others; every other level gets 1.
    """
    selected = select_levels(action, stats, config)
    weights = [1.0] * stats.num_levels
    if not selected:
        return WeightVector(tuple(weights))
    total = math.fsum(stats.interval_loss)
    if total <= 0.0:
        warnings.warn(
            f"interval {stats.t}: total interval loss is zero, {action.label} leaves all weights at 1",
            RuntimeWarning,
            stacklevel=2,
        )
        return WeightVector(tuple(weights))
    for rank, j in enumerate(selected):
        lam = config.lambda_primary if rank == 0 else config.lambda_secondary
        weights[j] = 1.0 + lam * stats.interval_loss[j] / total
    return WeightVector(tuple(weights))
