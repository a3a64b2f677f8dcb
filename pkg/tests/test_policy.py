import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scale_balancer.ledger import IntervalStats
from scale_balancer.policy import (
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
from scale_balancer.rng import controller_rng
from scale_balancer.weighting import Action, SelectionConfig

A0, A1, A2, A3 = Action


class Scripted:
    """Uniform source that replays fixed draws."""

    def __init__(self, draws):
        self.draws = list(draws)
        self.used = 0

    def random(self):
        u = self.draws[self.used]
        self.used += 1
        return u


def state_with_total(total, k=5):
    losses = (total / k,) * k
    return RloState(losses, losses, (1.0,) * k, (1.0,) * k)


def stats_with(losses, t=1):
    k = len(losses)
    return IntervalStats(t, tuple(map(float, losses)), (1.0,) * k, (0.0,) * k)


def update_oracle(probs, k, reward, gamma=Fraction(1, 100), lo=Fraction(1, 10), hi=Fraction(9, 10)):
    p = [Fraction(x) for x in probs]
    new = min(max(p[k] + (gamma if reward > 0 else -gamma), lo), hi)
    scale = (1 - new) / (1 - p[k])
    return [new if q == k else x * scale for q, x in enumerate(p)]


class TestReward:
    def test_drop(self):
        assert compute_reward(state_with_total(10.0), state_with_total(9.5)) == 1

    def test_flat(self):
        assert compute_reward(state_with_total(10.0), state_with_total(10.0)) == 0

    def test_rise(self):
        assert compute_reward(state_with_total(9.0), state_with_total(9.5)) == -1

    @given(
        a=st.lists(st.floats(0, 1e3), min_size=3, max_size=3),
        b=st.lists(st.floats(0, 1e3), min_size=3, max_size=3),
    )
    def test_antisymmetric(self, a, b):
        sa = RloState(tuple(a), tuple(a), (1.0,) * 3, (1.0,) * 3)
        sb = RloState(tuple(b), tuple(a), (1.0,) * 3, (1.0,) * 3)
        assert compute_reward(sa, sb) == -compute_reward(sb, sa)

    def test_level_mismatch(self):
        with pytest.raises(ValueError):
            compute_reward(state_with_total(1.0, 3), state_with_total(1.0, 4))


class TestBrelu:
    @pytest.mark.parametrize("x,expected", [(0.05, 0.1), (0.95, 0.9), (0.5, 0.5)])
    def test_clamp(self, x, expected):
        assert brelu(x, 0.1, 0.9) == expected


class TestUpdatePolicy:
    def test_award(self):
        got = update_policy(Policy(), A0, +1).probabilities
        expected = update_oracle([0.25] * 4, 0, +1)
        assert got == pytest.approx([float(e) for e in expected], abs=1e-12)
        assert got == pytest.approx([0.26, 0.2466666666666667, 0.2466666666666667, 0.2466666666666667], abs=1e-12)

    def test_zero_reward_punishes(self):
        got = update_policy(Policy(), A0, 0).probabilities
        assert got == pytest.approx([float(e) for e in update_oracle([0.25] * 4, 0, 0)], abs=1e-12)
        assert got == pytest.approx([0.24, 0.25333333333333333] + [0.25333333333333333] * 2, abs=1e-12)

    def test_lower_clamp(self):
        probs = (0.105, 0.295, 0.3, 0.3)
        got = update_policy(Policy(probs), A0, -1).probabilities
        assert got == pytest.approx([float(e) for e in update_oracle(probs, 0, -1)], abs=1e-12)
        assert got[0] == 0.1
        assert got[1] == pytest.approx(0.296648044692737, abs=1e-12)
        assert got[2] == pytest.approx(0.30167597765363124, abs=1e-12)

    def test_upper_clamp(self):
        probs = (0.895, 0.035, 0.035, 0.035)
        got = update_policy(Policy(probs), A0, +1).probabilities
        assert got[0] == 0.9
        assert math.fsum(got) == pytest.approx(1.0, abs=1e-15)

    def test_rescaled_entries_may_fall_below_beta_min(self):
        # only the updated entry is clamped
        probs = (0.88, 0.04, 0.04, 0.04)
        got = update_policy(Policy(probs), A0, +1).probabilities
        assert got[0] == 0.89
        assert all(0 < p < 0.1 for p in got[1:])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_simplex_preserved(self, seed):
        rng = np.random.default_rng(seed)
        policy = Policy()
        for _ in range(2000):
            k = Action(int(rng.integers(4)))
            reward = int(rng.integers(-1, 2))
            before = policy[k]
            policy = update_policy(policy, k, reward)
            assert 0.1 <= policy[k] <= 0.9
            assert all(p > 0 for p in policy.probabilities)
            if reward > 0:
                assert policy[k] > before or policy[k] == 0.9
            else:
                assert policy[k] < before or policy[k] == 0.1
        assert abs(math.fsum(policy.probabilities) - 1) <= 1e-10

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            Policy((0.5, 0.5, 0.0, 0.0))
        with pytest.raises(ValueError):
            Policy(beta_min=0.9, beta_max=0.1)
        with pytest.raises(ValueError):
            Policy((0.3, 0.3, 0.3, 0.3))


class TestSampleAction:
    def test_near_degenerate(self):
        d = 1e-15
        policy = Policy((1 - 3 * d, d, d, d))
        for u in (0.0, 0.5, 0.999):
            assert sample_action(policy, Scripted([u])) is A0

    def test_inverse_cdf(self):
        assert sample_action(Policy(), Scripted([0.30])) is A1
        assert sample_action(Policy(), Scripted([0.99])) is A3
        assert sample_action(Policy(), Scripted([0.0])) is A0
        assert sample_action(Policy(), Scripted([0.5])) is A2

    def test_one_draw(self):
        src = Scripted([0.1, 0.9])
        sample_action(Policy(), src)
        assert src.used == 1

    def test_frequencies(self):
        probs = (0.1, 0.2, 0.3, 0.4)
        rng = controller_rng(123)
        n = 100_000
        counts = np.bincount([sample_action(Policy(probs), rng) for _ in range(n)], minlength=4)
        for c, p in zip(counts, probs):
            assert abs(c / n - p) <= 4 * math.sqrt(p * (1 - p) / n)


class TestControllerStep:
    def test_first_call_has_no_update(self):
        state = ControllerState(num_levels=5)
        weights, new, report = controller_step(state, stats_with([10, 8, 6, 4, 2]), SelectionConfig(), controller_rng(1))
        assert report.t == 1 and new.t == 1
        assert report.reward == 0
        assert report.probabilities == (0.25,) * 4
        assert new.prev_action is report.action is not None
        assert report.weights == weights.weights

    def test_avw_never_consults_policy(self):
        state = ControllerState(num_levels=5, mode=Mode.AVW)
        src = Scripted([])  # any draw would raise IndexError
        for t, total in enumerate([30, 27, 29, 20], start=1):
            _, state, report = controller_step(state, stats_with([total / 5] * 5, t), SelectionConfig(), src)
            assert report.action is A0
            assert report.probabilities == (0.25,) * 4

    def test_reward_then_update_before_sampling(self):
        state = ControllerState(num_levels=5, mode=Mode.RLO)
        _, state, _ = controller_step(state, stats_with([10, 8, 6, 4, 2]), SelectionConfig(), Scripted([0.6]))
        assert state.prev_action is A2
        _, state, report = controller_step(state, stats_with([9, 7, 5, 4, 2], t=2), SelectionConfig(), Scripted([0.0]))
        assert report.reward == 1
        assert report.probabilities[2] == pytest.approx(0.26, abs=1e-15)

    def test_uniform_mode(self):
        state = ControllerState(num_levels=3, mode=Mode.UNIFORM)
        w, state, report = controller_step(state, stats_with([3, 2, 1]), SelectionConfig(), Scripted([]))
        assert w.weights == (1.0, 1.0, 1.0)
        assert report.action is None and state.prev_action is None

    def test_fixed_modes(self):
        for mode, action in [(Mode.FIXED_A1, A1), (Mode.FIXED_A2, A2), (Mode.FIXED_A3, A3)]:
            state = ControllerState(num_levels=5, mode=mode)
            _, _, report = controller_step(state, stats_with([10, 8, 6, 4, 2]), SelectionConfig(), Scripted([]))
            assert report.action is action

    def test_level_mismatch(self):
        with pytest.raises(ValueError, match="expects 4 levels"):
            controller_step(ControllerState(num_levels=4), stats_with([1, 2, 3]), SelectionConfig(), Scripted([0.1]))

    def test_report_json_round_trip(self):
        _, _, report = controller_step(ControllerState(num_levels=5), stats_with([10, 8, 6, 4, 2]), SelectionConfig(), controller_rng(3))
        obj = report.to_json()
        assert set(obj) == {
            "t", "action", "reward", "probabilities", "weights",
            "interval_losses", "variances", "reduction_rates", "seed_state_digest",
        }
        assert len(obj["probabilities"]) == 4 and len(obj["weights"]) == 5
        assert StepReport.from_json(obj) == report

    def test_determinism(self):
        def run(seed):
            state = ControllerState(num_levels=5)
            rng = controller_rng(seed)
            out = []
            for t in range(1, 40):
                losses = [abs(math.sin(t * (i + 1))) + 0.1 for i in range(5)]
                _, state, report = controller_step(state, stats_with(losses, t), SelectionConfig(), rng)
                out.append(report)
            return out

        assert run(5) == run(5)
        assert run(5) != run(6)

    def test_mode_parse(self):
        assert Mode.parse("AVW") is Mode.AVW
        with pytest.raises(ValueError, match="unknown mode"):
            Mode.parse("greedy")
