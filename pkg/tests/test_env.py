import math

import numpy as np
import pytest

from private_bandits.core_noise import NoiseSource
from private_bandits.env import (
    SETTINGS,
    BanditEnvironment,
    RegretAccountant,
    checkpoint_times,
    make_environment,
    means_c1,
    means_c2,
    means_c3,
    means_c4,
    pull,
    regret_increment,
)
from private_bandits.utils.exceptions import ConfigError, DomainError


class TestMeanGenerators:
    def test_c1(self):
        assert means_c1(5) == [0.75, 0.7, 0.7, 0.7, 0.7]
        assert means_c1(2) == [0.75, 0.7]

    def test_c1_equal_gaps(self):
        env = make_environment("c1", 6)
        assert env.gaps[1:].tolist() == pytest.approx([0.05] * 5)

    def test_c2(self):
        assert means_c2(5) == pytest.approx([0.75, 0.625, 0.5, 0.375, 0.25])
        assert means_c2(2) == pytest.approx([0.75, 0.25])
        assert means_c2(3) == pytest.approx([0.75, 0.5, 0.25])

    def test_c3(self):
        assert means_c3(5) == pytest.approx([0.75, 0.53125, 0.375, 0.28125, 0.25])
        assert means_c3(2) == pytest.approx([0.75, 0.25])

    def test_c4(self):
        assert means_c4(5) == pytest.approx([0.75, 0.71875, 0.625, 0.46875, 0.25])
        assert means_c4(2) == pytest.approx([0.75, 0.25])
        assert means_c4(3) == pytest.approx([0.75, 0.625, 0.25])

    @pytest.mark.parametrize("K", [2, 3, 5, 10, 20, 37])
    @pytest.mark.parametrize("name", ["c1", "c2", "c3", "c4"])
    def test_boundary_values(self, name, K):
        means = SETTINGS[name](K)
        assert len(means) == K
        assert means[0] == pytest.approx(0.75)
        if name != "c1":
            assert means[-1] == pytest.approx(0.25)

    @pytest.mark.parametrize("K", [3, 5, 10, 20])
    def test_convex_and_concave_spacing(self, K):
        c2 = make_environment("c2", K).gaps
        c3 = make_environment("c3", K).gaps
        c4 = make_environment("c4", K).gaps
        interior = slice(1, K - 1)
        assert (c3[interior] >= c2[interior]).all()
        assert (c4[interior] <= c2[interior]).all()

    @pytest.mark.parametrize("generator", [means_c1, means_c2, means_c3, means_c4])
    def test_small_k(self, generator):
        with pytest.raises(DomainError):
            generator(1)

    def test_unknown_setting(self):
        with pytest.raises(ConfigError):
            make_environment("c9", 5)


class TestEnvironment:
    def test_gaps(self):
        env = make_environment("c2", 5)
        assert env.optimal == 0
        assert env.gaps[0] == 0.0
        assert (env.gaps >= 0).all()

    def test_ties_go_to_lowest_index(self):
        assert BanditEnvironment([0.2, 0.9, 0.9]).optimal == 1

    def test_rejects_means_outside_unit_interval(self):
        with pytest.raises(DomainError):
            BanditEnvironment([0.5, 1.2])

    def test_immutable(self):
        env = make_environment("c1", 3)
        with pytest.raises(ValueError):
            env.means[0] = 0.1

    def test_regret_increment(self):
        assert regret_increment(make_environment("c2", 5), 0) == 0.0
        assert regret_increment(make_environment("c2", 5), 2) == pytest.approx(0.25)
        assert regret_increment(make_environment("c1", 5), 3) == pytest.approx(0.05)

    def test_invalid_arm(self):
        with pytest.raises(DomainError):
            regret_increment(make_environment("c1", 3), 3)


class TestPull:
    def test_extreme_means(self):
        env = BanditEnvironment([1.0, 0.0])
        source = NoiseSource(1)
        assert all(pull(env, 0, source) == 1.0 for _ in range(100))
        assert all(pull(env, 1, source) == 0.0 for _ in range(100))

    def test_deterministic_returns_mean(self):
        env = BanditEnvironment([0.75, 0.3], deterministic=True)
        assert pull(env, 1, NoiseSource(1)) == 0.3

    def test_empirical_mean(self):
        env = BanditEnvironment([0.75, 0.25])
        rewards = env.reward_tape(NoiseSource(2)).draws(0, 100_000)
        se = math.sqrt(0.75 * 0.25 / 100_000)
        assert abs(rewards.mean() - 0.75) <= 4 * se


class TestRewardTape:
    def test_scalar_and_block_draws_agree(self):
        env = BanditEnvironment([0.6, 0.4])
        a = env.reward_tape(NoiseSource(5), block=7)
        b = env.reward_tape(NoiseSource(5), block=64)
        scalar = [a.draw(1) for _ in range(50)]
        block = b.draws(1, 20).tolist() + [b.draw(1) for _ in range(5)] + b.draws(1, 25).tolist()
        assert scalar == block

    def test_arms_have_independent_tapes(self):
        env = BanditEnvironment([0.5, 0.5])
        tape = env.reward_tape(NoiseSource(5))
        first = tape.draws(0, 200).tolist()
        other = env.reward_tape(NoiseSource(5))
        other.draws(1, 1000)
        assert other.draws(0, 200).tolist() == first

    def test_draw_counts(self):
        tape = BanditEnvironment([0.5, 0.5]).reward_tape(NoiseSource(1))
        tape.draws(0, 10)
        tape.draw(1)
        assert tape.draws_per_arm == [10, 1]


class TestRegretAccountant:
    def test_checkpoint_times(self):
        assert checkpoint_times(1000, 4) == [250, 500, 750, 1000]
        assert checkpoint_times(10, 3) == [3, 7, 10]
        assert checkpoint_times(3, 10) == [1, 2, 3]

    def test_record_matches_pull_counts(self):
        env = make_environment("c2", 5)
        acct = RegretAccountant(env, 100, checkpoints=10)
        arms = [i % 5 for i in range(100)]
        for arm in arms:
            acct.record(arm)
        assert acct.pulls.tolist() == [20] * 5
        assert acct.checkpoints[-1] == (100, pytest.approx(float(np.dot([20] * 5, env.gaps))))
        values = [r for _, r in acct.checkpoints]
        assert values == sorted(values)

    def test_cycle_equals_individual_records(self):
        env = make_environment("c3", 4)
        a = RegretAccountant(env, 103, checkpoints=17)
        b = RegretAccountant(env, 103, checkpoints=17)
        a.record_cycle([1, 2, 3], 50)
        a.record_cycle([0, 3], 53)
        for i in range(50):
            b.record([1, 2, 3][i % 3])
        for i in range(53):
            b.record([0, 3][i % 2])
        assert a.pulls.tolist() == b.pulls.tolist()
        assert [t for t, _ in a.checkpoints] == [t for t, _ in b.checkpoints]
        assert [r for _, r in a.checkpoints] == pytest.approx([r for _, r in b.checkpoints])

    def test_overflow(self):
        acct = RegretAccountant(make_environment("c1", 2), 3)
        acct.record_cycle([0, 1], 3)
        with pytest.raises(DomainError):
            acct.record(0)
        with pytest.raises(DomainError):
            acct.record_cycle([0], 1)
