"""Probabilistic action selection over the weighting actions.

A four-armed bandit: every ``alpha`` iterations the controller rewards or
punishes the previous action by the sign of the change in total interval
loss, then samples the next action from the updated probabilities.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Protocol

from .ledger import INITIAL_VARIANCE, IntervalStats, WeightVector
from .rng import state_digest
from .weighting import Action, SelectionConfig, apply_action

NUM_ACTIONS = len(Action)


class UniformSource(Protocol):
    def random(self) -> float: ...


class Mode(str, enum.Enum):
    RLO = "rlo"
    AVW = "avw"
    FIXED_A1 = "fixed-a1"
    FIXED_A2 = "fixed-a2"
    FIXED_A3 = "fixed-a3"
    UNIFORM = "uniform"

    @classmethod
    def parse(cls, value: str | Mode) -> Mode:
        if isinstance(value, Mode):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown mode {value!r}; expected one of {names}") from None

    @property
    def selects_levels(self) -> bool:
        return self not in (Mode.UNIFORM, Mode.FIXED_A3)

    @property
    def fixed_action(self) -> Action | None:
        return {
            Mode.AVW: Action.A0_MAX_VARIANCE_REDUCTION,
            Mode.FIXED_A1: Action.A1_MIN_INTERVAL_LOSS,
            Mode.FIXED_A2: Action.A2_MAX_INTERVAL_LOSS,
            Mode.FIXED_A3: Action.A3_RESET_TO_ONE,
        }.get(self)


@dataclass(frozen=True)
class RloState:
    interval_loss_curr: tuple[float, ...]
    interval_loss_prev: tuple[float, ...]
    variance_curr: tuple[float, ...]
    variance_prev: tuple[float, ...]

    def __post_init__(self) -> None:
        k = len(self.interval_loss_curr)
        if not all(
            len(v) == k for v in (self.interval_loss_prev, self.variance_curr, self.variance_prev)
        ):
            raise ValueError("state vectors must all cover the same levels")

    @classmethod
    def from_stats(cls, curr: IntervalStats, prev: IntervalStats | None) -> RloState:
        # Before the first interval there is no previous loss; reusing the
        # current one makes the implied initial reward exactly 0.
        if prev is None:
            return cls(
                interval_loss_curr=curr.interval_loss,
                interval_loss_prev=curr.interval_loss,
                variance_curr=curr.variance,
                variance_prev=(INITIAL_VARIANCE,) * curr.num_levels,
            )
        return cls(curr.interval_loss, prev.interval_loss, curr.variance, prev.variance)

    @property
    def total_loss(self) -> float:
        return math.fsum(self.interval_loss_curr)


def compute_reward(prev_state: RloState, curr_state: RloState) -> int:
    if len(prev_state.interval_loss_curr) != len(curr_state.interval_loss_curr):
        raise ValueError("states cover different numbers of levels")
    drop = prev_state.total_loss - curr_state.total_loss
    return (drop > 0) - (drop < 0)


def brelu(x: float, beta_min: float, beta_max: float) -> float:
    return min(max(x, beta_min), beta_max)


@dataclass(frozen=True)
class Policy:
    probabilities: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    gamma: float = 0.01
    beta_min: float = 0.1
    beta_max: float = 0.9

    def __post_init__(self) -> None:
        if len(self.probabilities) != NUM_ACTIONS:
            raise ValueError(f"need {NUM_ACTIONS} probabilities, got {len(self.probabilities)}")
        if not 0 < self.beta_min < self.beta_max < 1:
            raise ValueError(f"need 0 < beta_min < beta_max < 1, got {self.beta_min}, {self.beta_max}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not all(0 < p < 1 for p in self.probabilities):
            raise ValueError(f"probabilities must lie in (0, 1): {self.probabilities}")
        # Repeated rescaling accumulates rounding, hence the looser check.
        if abs(math.fsum(self.probabilities) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1: {self.probabilities}")

    def __getitem__(self, action: int) -> float:
        return self.probabilities[action]


def update_policy(policy: Policy, prev_action: Action, reward: int) -> Policy:
    """Reward (``reward > 0``) or punish the previous action by ``gamma``.

    Only the updated probability is clamped into ``[beta_min, beta_max]``;
    the others are rescaled so the total stays 1, and may therefore end up
    below ``beta_min``.

    The rescale divides by the summed remaining mass rather than by
    ``1 - old``. The two agree while the total is 1, but the literal form
    multiplies any rounding residue in the total at every update and blows
    up within a few thousand updates.
    """
    k = int(prev_action)
    old = policy.probabilities[k]
    step = policy.gamma if reward > 0 else -policy.gamma
    new = brelu(old + step, policy.beta_min, policy.beta_max)
    rest = math.fsum(p for q, p in enumerate(policy.probabilities) if q != k)
    scale = (1.0 - new) / rest
    probs = tuple(new if q == k else p * scale for q, p in enumerate(policy.probabilities))
    return replace(policy, probabilities=probs)


def sample_action(policy: Policy, rng: UniformSource) -> Action:
    """Inverse-CDF draw in action order; consumes one uniform."""
    u = rng.random()
    cumulative = 0.0
    for action, p in zip(Action, policy.probabilities):
        cumulative += p
        if u < cumulative:
            return action
    # u landed in the rounding gap above the last cumulative bound
    return Action(NUM_ACTIONS - 1)


@dataclass(frozen=True)
class StepReport:
    t: int
    action: Action | None
    reward: int
    probabilities: tuple[float, ...]
    weights: tuple[float, ...]
    interval_losses: tuple[float, ...]
    variances: tuple[float, ...]
    reduction_rates: tuple[float, ...]
    seed_state_digest: str | None

    def to_json(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "action": None if self.action is None else self.action.label,
            "reward": self.reward,
            "probabilities": list(self.probabilities),
            "weights": list(self.weights),
            "interval_losses": list(self.interval_losses),
            "variances": list(self.variances),
            "reduction_rates": list(self.reduction_rates),
            "seed_state_digest": self.seed_state_digest,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> StepReport:
        action = obj["action"]
        return cls(
            t=obj["t"],
            action=None if action is None else Action.from_label(action),
            reward=obj["reward"],
            probabilities=tuple(obj["probabilities"]),
            weights=tuple(obj["weights"]),
            interval_losses=tuple(obj["interval_losses"]),
            variances=tuple(obj["variances"]),
            reduction_rates=tuple(obj["reduction_rates"]),
            seed_state_digest=obj["seed_state_digest"],
        )


@dataclass(frozen=True)
class ControllerState:
    """Everything the controller carries from one interval to the next.

    ``prev_action`` stays ``None`` in uniform mode, which never acts.
    """

    num_levels: int
    mode: Mode = Mode.RLO
    policy: Policy = field(default_factory=Policy)
    t: int = 0
    prev_action: Action | None = None
    prev_state: RloState | None = None
    prev_stats: IntervalStats | None = None
    last_reward: int = 0

    def __post_init__(self) -> None:
        if self.num_levels < 1:
            raise ValueError(f"num_levels must be positive, got {self.num_levels}")
        if self.t == 0 and self.prev_action is not None:
            raise ValueError("no action can precede the first interval")


def controller_step(
    state: ControllerState,
    stats: IntervalStats,
    config: SelectionConfig,
    rng: UniformSource,
) -> tuple[WeightVector, ControllerState, StepReport]:
    """Run one interval boundary: reward, policy update, action, weights."""
    if stats.num_levels != state.num_levels:
        raise ValueError(
            f"controller expects {state.num_levels} levels, interval {stats.t} has {stats.num_levels}"
        )
    t = state.t + 1
    curr = RloState.from_stats(stats, state.prev_stats)
    policy = state.policy
    reward = 0
    if state.prev_state is not None:
        reward = compute_reward(state.prev_state, curr)
        if state.mode is Mode.RLO and state.prev_action is not None:
            policy = update_policy(policy, state.prev_action, reward)

    if state.mode is Mode.RLO:
        action: Action | None = sample_action(policy, rng)
    else:
        action = state.mode.fixed_action

    if action is None:
        weights = WeightVector.ones(stats.num_levels)
    else:
        weights = apply_action(action, stats, config)

    new_state = replace(
        state,
        t=t,
        policy=policy,
        prev_action=action,
        prev_state=curr,
        prev_stats=stats,
        last_reward=reward,
    )
    report = StepReport(
        t=t,
        action=action,
        reward=reward,
        probabilities=policy.probabilities,
        weights=weights.weights,
        interval_losses=stats.interval_loss,
        variances=stats.variance,
        reduction_rates=stats.reduction_rate,
        seed_state_digest=state_digest(rng),
    )
    return weights, new_state, report
