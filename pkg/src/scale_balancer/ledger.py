"""Per-level loss bookkeeping and interval statistics.

Losses are stored per level as ``iteration -> value`` and every window
statistic is recomputed from the stored records with ``math.fsum``, so the
same records always give the same bits regardless of how they arrived.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

#: Guard added to the previous variance when computing reduction rates.
EPSILON = 0.00001

#: Variance assumed for the interval before the first one.
INITIAL_VARIANCE = 1.0

#: Reduction rate reported for the first interval.
INITIAL_REDUCTION_RATE = 0.0


class LedgerError(ValueError):
    """Invalid loss record or an unanswerable window query."""


@dataclass
class LossTrace:
    """Raw per-level loss stream.

    ``level_offset`` only affects how levels are labelled on the way out
    (file export, reports); all indexing here is 0-based.
    """

    num_levels: int
    level_offset: int = 0
    _levels: list[dict[int, float]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.num_levels < 1:
            raise LedgerError(f"num_levels must be positive, got {self.num_levels}")
        self._levels = [{} for _ in range(self.num_levels)]

    def record(self, iteration: int, level: int, value: float) -> None:
        if not 0 <= level < self.num_levels:
            raise LedgerError(
                f"level {level} out of range [0, {self.num_levels}) at iteration {iteration}"
            )
        if iteration < 1:
            raise LedgerError(f"iteration must be positive, got {iteration} (level {level})")
        value = float(value)
        if not math.isfinite(value):
            raise LedgerError(f"non-finite loss {value!r} at iteration {iteration}, level {level}")
        if value < 0:
            raise LedgerError(f"negative loss {value!r} at iteration {iteration}, level {level}")
        records = self._levels[level]
        if iteration in records:
            raise LedgerError(f"duplicate record for iteration {iteration}, level {level}")
        if records and iteration < next(reversed(records)):
            raise LedgerError(
                f"iteration {iteration} is out of order for level {level} "
                f"(last recorded {next(reversed(records))})"
            )
        records[iteration] = value

    def __len__(self) -> int:
        return sum(len(r) for r in self._levels)

    def records(self) -> Iterator[tuple[int, int, float]]:
        """Yield ``(iteration, level, loss)`` sorted by iteration then level."""
        merged = sorted(
            (it, lvl, v) for lvl, recs in enumerate(self._levels) for it, v in recs.items()
        )
        yield from merged

    def last_iteration(self, level: int | None = None) -> int:
        """Largest recorded iteration, for one level or the minimum over all levels."""
        if level is not None:
            recs = self._levels[level]
            return next(reversed(recs)) if recs else 0
        return min(self.last_iteration(lvl) for lvl in range(self.num_levels))

    def window(self, level: int, t: int, alpha: int) -> list[float]:
        """Losses of ``level`` for iterations ``(t-1)*alpha + 1 .. t*alpha``."""
        if alpha < 1:
            raise LedgerError(f"alpha must be positive, got {alpha}")
        if t < 1:
            raise LedgerError(f"interval index must be positive, got {t}")
        if not 0 <= level < self.num_levels:
            raise LedgerError(f"level {level} out of range [0, {self.num_levels})")
        recs = self._levels[level]
        start = (t - 1) * alpha + 1
        values = []
        missing = []
        for m in range(start, t * alpha + 1):
            v = recs.get(m)
            if v is None:
                missing.append(m)
            else:
                values.append(v)
        if missing:
            raise LedgerError(
                f"level {level}, interval {t} (alpha={alpha}) is missing iterations "
                f"{_format_gaps(missing)}"
            )
        return values


def _format_gaps(missing: list[int]) -> str:
    spans = []
    lo = prev = missing[0]
    for m in missing[1:]:
        if m != prev + 1:
            spans.append((lo, prev))
            lo = m
        prev = m
    spans.append((lo, prev))
    return ", ".join(str(a) if a == b else f"{a}-{b}" for a, b in spans)


def record_loss(trace: LossTrace, iteration: int, level: int, value: float) -> LossTrace:
    trace.record(iteration, level, value)
    return trace


def window_sum(values: Sequence[float]) -> float:
    return math.fsum(values)


def window_variance(values: Sequence[float]) -> float:
    """Sample variance of a window, the mean taken over the window length."""
    n = len(values)
    if n < 2:
        raise LedgerError(f"alpha must be >= 2 for a variance, got {n}")
    mean = math.fsum(values) / n
    return math.fsum((v - mean) ** 2 for v in values) / (n - 1)


def interval_loss(trace: LossTrace, level: int, t: int, alpha: int) -> float:
    return window_sum(trace.window(level, t, alpha))


def interval_variance(trace: LossTrace, level: int, t: int, alpha: int) -> float:
    if alpha < 2:
        raise LedgerError(f"alpha must be >= 2, got {alpha}")
    return window_variance(trace.window(level, t, alpha))


def variance_reduction_rate(var_prev: float, var_curr: float) -> float:
    return (var_prev - var_curr) / (var_prev + EPSILON)


def weighted_total(losses: Sequence[float], weights: Sequence[float]) -> float:
    if len(losses) != len(weights):
        raise LedgerError(f"{len(losses)} losses but {len(weights)} weights")
    return math.fsum(w * v for w, v in zip(weights, losses))


@dataclass(frozen=True)
class IntervalStats:
    """Window statistics for every level at interval ``t``."""

    t: int
    interval_loss: tuple[float, ...]
    variance: tuple[float, ...]
    reduction_rate: tuple[float, ...]

    def __post_init__(self) -> None:
        k = len(self.interval_loss)
        if len(self.variance) != k or len(self.reduction_rate) != k:
            raise LedgerError("interval statistics must cover the same number of levels")

    @property
    def num_levels(self) -> int:
        return len(self.interval_loss)

    @property
    def total_loss(self) -> float:
        return math.fsum(self.interval_loss)


def compute_interval_stats(
    trace: LossTrace, t: int, alpha: int, previous: IntervalStats | None = None
) -> IntervalStats:
    """Statistics for interval ``t``.

    The first interval reports the fixed initial reduction rate; later
    intervals need ``previous`` (interval ``t - 1``) to measure the drop.
    """
    if alpha < 2:
        raise LedgerError(f"alpha must be >= 2, got {alpha}")
    windows = [trace.window(level, t, alpha) for level in range(trace.num_levels)]
    losses = tuple(window_sum(w) for w in windows)
    variances = tuple(window_variance(w) for w in windows)
    if t == 1:
        rates = (INITIAL_REDUCTION_RATE,) * trace.num_levels
    else:
        if previous is None or previous.t != t - 1:
            raise LedgerError(f"interval {t} needs the statistics of interval {t - 1}")
        rates = tuple(
            variance_reduction_rate(vp, vc) for vp, vc in zip(previous.variance, variances)
        )
    return IntervalStats(t=t, interval_loss=losses, variance=variances, reduction_rate=rates)


@dataclass(frozen=True)
class WeightVector:
    """Per-level loss multipliers; a level is either untouched (1) or boosted."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        for i, w in enumerate(self.weights):
            if not (math.isfinite(w) and w >= 1.0):
                raise LedgerError(f"weight {i} must be finite and >= 1, got {w!r}")

    @classmethod
    def ones(cls, num_levels: int) -> WeightVector:
        return cls((1.0,) * num_levels)

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self) -> Iterator[float]:
        return iter(self.weights)

    def __getitem__(self, i: int) -> float:
        return self.weights[i]

    @property
    def num_boosted(self) -> int:
        return sum(1 for w in self.weights if w > 1.0)
