#
# Tests for GRPO group advantages, loss and collapse monitoring
#
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from lengthlab import grpo
from lengthlab.core import Trajectory
from lengthlab.grpo import GroupSample, GroupStats, GrpoConfig


def response(T, p=0.5):
    return Trajectory(tuple([0] * (T - 1) + [7]), np.full(T, p), terminated=True)


def group(rewards, lengths=None):
    lengths = lengths or [3] * len(rewards)
    return GroupSample("p", [response(T) for T in lengths], rewards)


@st.composite
def binary_groups(draw):
    N = draw(st.integers(min_value=2, max_value=64))
    k = draw(st.integers(min_value=1, max_value=N - 1))
    return N, k


class TestGroupAdvantage():
    @given(binary_groups())
    @settings(max_examples=300, deadline=None)
    def test_matches_closed_form(self, Nk):
        N, k = Nk
        rewards = np.array([1.0] * k + [0.0] * (N - k))
        advantages = grpo.group_advantage(rewards)
        assert advantages[0] == pytest.approx(grpo.closed_form_advantage(N, k, 1))
        assert advantages[-1] == pytest.approx(grpo.closed_form_advantage(N, k, 0))

    @given(st.lists(st.floats(min_value=-10, max_value=10), min_size=2,
                    max_size=32),
           st.floats(min_value=0.1, max_value=10),
           st.floats(min_value=-10, max_value=10))
    @settings(max_examples=200, deadline=None)
    def test_affine_invariance(self, rewards, scale, shift):
        r = np.array(rewards)
        assume(np.std(r) > 1e-3)
        advantages = grpo.group_advantage(r)
        assert abs(advantages.sum()) < 1e-8, 'Advantages should sum to zero'
        assert np.allclose(grpo.group_advantage(scale * r + shift), advantages,
                           atol=1e-8)

    def test_zero_spread_gives_zero(self):
        assert np.array_equal(grpo.group_advantage([1.0, 1.0, 1.0]), np.zeros(3))
        assert np.array_equal(grpo.group_advantage([0.0, 0.0]), np.zeros(2))

    def test_without_std(self):
        assert np.allclose(grpo.group_advantage([1.0, 0.0, 0.0, 0.0], False),
                           [0.75, -0.25, -0.25, -0.25])

    def test_needs_two(self):
        with pytest.raises(ValueError):
            grpo.group_advantage([1.0])


class TestClosedForm():
    def test_values(self):
        assert grpo.closed_form_advantage(8, 1, 1) == pytest.approx(np.sqrt(7))
        assert grpo.closed_form_advantage(8, 1, 0) == pytest.approx(-np.sqrt(1 / 7))
        assert grpo.closed_form_advantage(8, 0, 0) == 0.0
        assert grpo.closed_form_advantage(8, 8, 1) == 0.0

    @pytest.mark.parametrize("N, sigma", [
        (8, 0.3307), (16, 0.2421), (64, 0.1240), (256, 0.0624),
    ])
    def test_sigma_single_correct(self, N, sigma):
        assert grpo.binary_std(N, 1) == pytest.approx(sigma, abs=5e-5)

    @pytest.mark.parametrize("N, k, r", [(0, 0, 1), (4, 5, 1), (4, 2, 2)])
    def test_invalid(self, N, k, r):
        with pytest.raises(ValueError):
            grpo.closed_form_advantage(N, k, r)

    def test_table(self):
        table = grpo.advantage_table([2, 8])
        assert list(table.columns) == ["N", "k", "sigma", "advantage_correct",
                                       "advantage_wrong"]
        assert table[table["N"] == 2]["k"].tolist() == [1]
        assert table[table["N"] == 8]["k"].tolist() == [1, 2, 3, 5, 6, 7]
        row = table[(table["N"] == 8) & (table["k"] == 1)].iloc[0]
        assert row["advantage_correct"] == pytest.approx(np.sqrt(7))
        with pytest.raises(ValueError):
            grpo.advantage_table([1])

    def test_drgrpo_magnitudes(self):
        magnitudes = grpo.drgrpo_magnitudes([8])
        advantage = magnitudes["advantage"]
        assert advantage["k"].tolist() == [1, 4]
        assert np.allclose(advantage["shrink_factor"], 1 / advantage["sigma"])
        assert advantage["sigma"].iloc[1] == pytest.approx(0.5)
        assert magnitudes["length"]["loss_growth"].tolist() == [1000.0, 30000.0]


class TestKl():
    def test_equal_is_zero(self):
        probs = [[0.2, 0.5], [0.9]]
        assert grpo.kl_estimate(probs, probs) == 0.0

    def test_positive_and_summed(self):
        new, ref = [[0.5, 0.5]], [[0.25, 0.25]]
        average = grpo.kl_estimate(new, ref, average=True)
        assert average == pytest.approx(0.5 - np.log(0.5) - 1)
        assert grpo.kl_estimate(new, ref, average=False) == pytest.approx(2 * average)

    def test_invalid(self):
        with pytest.raises(ValueError):
            grpo.kl_estimate([[0.5]], [[0.5, 0.5]])
        with pytest.raises(ValueError):
            grpo.kl_estimate([[0.0]], [[0.5]])

    def test_response_count_mismatch(self):
        with pytest.raises(ValueError):
            grpo.kl_estimate([[0.5], [0.5]], [[0.5]])
        with pytest.raises(ValueError):
            grpo.kl_estimate([[0.5]], [])


class TestGrpoLoss():
    def test_group_sample(self):
        sample = group([1.0, 0.0, 1.0])
        assert sample.G == 3 and sample.k == 2
        with pytest.raises(ValueError):
            group([1.0])
        with pytest.raises(ValueError):
            GroupSample("p", [response(2), response(2)], [1.0])

    def test_length_normalised_is_zero_at_identity(self):
        sample = group([1.0, 0.0], lengths=[2, 4])
        loss = grpo.grpo_loss(sample, [t.old_probs for t in sample.trajectories])
        assert loss["policy_loss"] == pytest.approx(0.0)
        assert np.allclose(loss["advantages"], [1.0, -1.0])

    def test_length_sum_favours_long_wrong(self):
        sample = group([1.0, 0.0], lengths=[2, 4])
        config = GrpoConfig(normalize_by_length=False)
        loss = grpo.grpo_loss(sample, [t.old_probs for t in sample.trajectories],
                              config)
        assert loss["policy_loss"] == pytest.approx(1.0), \
            'Summing tokens should weight the long wrong response more'

    def test_all_correct_group_only_kl(self):
        sample = group([1.0, 1.0, 1.0])
        new = [t.old_probs for t in sample.trajectories]
        ref = [np.full(3, 0.25)] * 3
        config = GrpoConfig(kl_weight=0.1)
        loss = grpo.grpo_loss(sample, new, config, ref)
        assert loss["policy_loss"] == 0.0
        assert loss["kl"] > 0
        assert loss["total"] == pytest.approx(0.1 * loss["kl"])
        stats = grpo.group_stats(4, sample, loss)
        assert stats.zero_advantage and stats.k == 3 and stats.N == 3

    def test_all_correct_group_with_penalty_keeps_advantage(self):
        # terminal step penalty: both solved, the shorter one scores higher
        sample = GroupSample("p", [response(2), response(4)], [0.8, 0.6],
                             solved=[True, True])
        loss = grpo.grpo_loss(sample, [t.old_probs for t in sample.trajectories])
        assert np.allclose(loss["advantages"], [1.0, -1.0])
        stats = grpo.group_stats(0, sample, loss)
        assert stats.k == stats.N == 2
        assert not stats.zero_advantage
        assert stats.advantage_correct == pytest.approx(0.0)

    def test_clipping(self):
        sample = group([1.0, 0.0])
        new = [np.full(3, 0.9), np.full(3, 0.9)]
        loss = grpo.grpo_loss(sample, new, GrpoConfig(clip=0.2))
        # positive advantage clipped at 1.2, negative one keeps rho = 1.8
        assert loss["policy_loss"] == pytest.approx(-(1.2 - 1.8) / 2)

    def test_invalid(self):
        sample = group([1.0, 0.0])
        with pytest.raises(ValueError):
            grpo.grpo_loss(sample, [np.full(3, 0.5)])
        with pytest.raises(ValueError):
            grpo.grpo_loss(sample, [np.full(3, 0.5), np.full(2, 0.5)])
        with pytest.raises(ValueError):
            GrpoConfig(clip=0.0)
        with pytest.raises(ValueError):
            GrpoConfig(collapse_window=0)


class TestCollapseMonitor():
    @staticmethod
    def stats(step, k, policy_loss, kl):
        return GroupStats(step, "p", k, 4, 0.0, 0.0, policy_loss, kl,
                          policy_loss + kl, k in (0, 4))

    def test_rates_and_dominance(self):
        history = [[self.stats(s, 4, 0.0, 1.0), self.stats(s, 0, 0.0, 1.0)]
                   for s in range(6)]
        report = grpo.collapse_monitor(history, kl_weight=0.1, window=3)
        assert report.all_correct_rate == [0.5] * 6
        assert report.all_wrong_rate == [0.5] * 6
        assert report.zero_advantage_rate == [1.0] * 6
        assert report.kl_dominance
        assert report.first_dominance_step == 2

    def test_no_dominance(self):
        history = [[self.stats(s, 2, -0.5, 0.01)] for s in range(10)]
        report = grpo.collapse_monitor(history, kl_weight=0.1)
        assert not report.kl_dominance
        assert report.first_dominance_step is None
        assert report.to_dict()["zero_advantage_rate"] == [0.0] * 10

    def test_empty(self):
        with pytest.raises(ValueError):
            grpo.collapse_monitor([], 0.1)
        with pytest.raises(ValueError):
            grpo.collapse_monitor([[]], 0.1)
