import math
import statistics

import pytest

from private_bandits.algorithms import (
    EpochState,
    dp_se_run,
    dp_ucb_run,
    eliminate,
    epoch_length,
    instance_regret_bound,
    lemma_pull_bound,
    minimax_regret_bound,
    run_algorithm,
    se_run,
    ucb_index,
    ucb_inflation,
    ucb_run,
)
from private_bandits.core_noise import NoiseSource, ZeroNoiseSource
from private_bandits.env import BanditEnvironment, make_environment
from private_bandits.utils.exceptions import ConfigError, DomainError

C1_EPOCHS = (2242, 9674, 40350)
C1_LAST_ELIMINATION = 5 * sum(C1_EPOCHS)


class TestEpochLength:
    def test_regression(self):
        assert epoch_length(5, 1, 0.1, 1.0) == 768

    def test_hoeffding_branch_dominates_for_large_epsilon(self):
        s, e, beta = 5, 3, 0.1
        expected = math.ceil(32 * math.log(8 * s * e * e / beta) / (2.0**-e) ** 2) + 1
        assert epoch_length(s, e, beta, 1e6) == expected
        assert epoch_length(s, e, beta, math.inf) == expected

    @pytest.mark.parametrize("s", [1, 2, 5, 20])
    @pytest.mark.parametrize("beta", [1e-6, 0.01, 0.1])
    @pytest.mark.parametrize("epsilon", [0.1, 1.0, 10.0])
    def test_roughly_doubles(self, s, beta, epsilon):
        for e in range(1, 12):
            assert epoch_length(s, e + 1, beta, epsilon) > 2 * (epoch_length(s, e, beta, epsilon) - 2)

    @pytest.mark.parametrize("args", [(0, 1, 0.1, 1.0), (1, 0, 0.1, 1.0), (1, 1, 1.0, 1.0), (1, 1, 0.1, 0.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            epoch_length(*args)


class TestEliminate:
    def test_equal_means_keep_everyone(self):
        state = EpochState.start([0, 1, 2], 1, 0.1, 1.0)
        state.empirical = {0: 0.4, 1: 0.4, 2: 0.4}
        survivors, _ = eliminate(state, ZeroNoiseSource(0))
        assert survivors == [0, 1, 2]

    def test_gap_just_above_threshold(self):
        state = EpochState.start([0, 1], 3, 0.1, 1.0)
        assert state.R_e == 14895
        assert state.h_e == pytest.approx(math.sqrt(math.log(8 * 2 * 9 / 0.1) / (2 * 14895)))
        assert state.c_e == pytest.approx(math.log(4 * 2 * 9 / 0.1) / 14895)
        state.empirical = {0: 0.9, 1: 0.9 - 2 * state.h_e - 2 * state.c_e - 1e-9}
        survivors, noisy = eliminate(state, ZeroNoiseSource(0))
        assert survivors == [0]
        assert noisy == state.empirical

    def test_gap_equal_to_threshold_survives(self):
        state = EpochState.start([0, 1], 3, 0.1, 1.0)
        state.empirical = {0: state.threshold, 1: 0.0}
        survivors, _ = eliminate(state, ZeroNoiseSource(0))
        assert survivors == [0, 1]

    def test_argmax_always_survives(self):
        state = EpochState.start([0, 1, 2, 3], 1, 0.1, 0.01)
        state.empirical = {0: 0.1, 1: 0.9, 2: 0.5, 3: 0.2}
        for seed in range(50):
            survivors, noisy = eliminate(state, NoiseSource(seed))
            assert max(noisy, key=noisy.get) in survivors

    def test_noise_is_laplace_on_epoch_arm_substream(self):
        state = EpochState.start([0, 1], 2, 0.1, 1.0)
        state.empirical = {0: 0.5, 1: 0.5}
        noise = NoiseSource(3)
        _, noisy = eliminate(state, noise)
        expected = 0.5 + noise.substream(2, 1).laplace(1.0 / state.R_e)
        assert noisy[1] == expected

    def test_missing_means(self):
        state = EpochState.start([0, 1], 1, 0.1, 1.0)
        state.empirical = {0: 0.5}
        with pytest.raises(DomainError):
            eliminate(state, ZeroNoiseSource(0))


class TestDpSe:
    def test_c1_deterministic_regression(self, c1_deterministic):
        trace = dp_se_run(c1_deterministic, 5, 1e-6, 0.5, 10**6, ZeroNoiseSource(0))
        assert trace.eliminations == [(arm, 3, C1_LAST_ELIMINATION) for arm in (1, 2, 3, 4)]
        assert trace.survivor == 0
        assert trace.pulls == [10**6 - 4 * sum(C1_EPOCHS)] + [sum(C1_EPOCHS)] * 4
        assert trace.final_regret == pytest.approx(4 * 0.05 * sum(C1_EPOCHS))
        assert not trace.private

    def test_flat_after_last_elimination(self, c1_deterministic):
        trace = dp_se_run(c1_deterministic, 5, 1e-6, 0.5, 10**6, ZeroNoiseSource(0))
        after = [r for t, r in trace.checkpoints if t >= C1_LAST_ELIMINATION]
        assert len(after) > 50
        assert all(b - a == 0 for a, b in zip(after, after[1:]))

    def test_matches_non_private_se_without_noise(self, c1_deterministic):
        private = dp_se_run(c1_deterministic, 5, 1e-6, 1e9, 10**6, ZeroNoiseSource(0))
        plain = se_run(c1_deterministic, 5, 1e-6, 10**6, ZeroNoiseSource(0))
        assert [(a, e) for a, e, _ in private.eliminations] == [(a, e) for a, e, _ in plain.eliminations]

    def test_privacy_audit(self, c1_deterministic):
        trace = dp_se_run(c1_deterministic, 5, 1e-6, 0.5, 10**6, NoiseSource(1))
        keys = [(row.epoch, row.arm) for row in trace.audit]
        assert len(keys) == len(set(keys))
        for row in trace.audit:
            assert row.sensitivity == pytest.approx(1 / row.samples)
            assert row.scale == pytest.approx(1 / (0.5 * row.samples))
        last = max(t for _, _, t in trace.eliminations)
        assert sum(row.samples for row in trace.audit) == last

    def test_horizon_ends_mid_epoch(self, c1_deterministic):
        trace = dp_se_run(c1_deterministic, 5, 1e-6, 0.5, 5003, NoiseSource(1))
        assert trace.pulls == [1001, 1001, 1001, 1000, 1000]
        assert trace.eliminations == []
        assert trace.survivor is None
        assert trace.audit == []

    def test_beta_defaults_to_inverse_horizon(self, two_arm_env):
        trace = dp_se_run(two_arm_env, 2, None, 1.0, 10_000, NoiseSource(1))
        assert trace.config["beta"] == pytest.approx(1e-4)

    def test_total_pulls_and_monotone_regret(self):
        env = make_environment("c2", 5)
        trace = dp_se_run(env, 5, None, 0.5, 200_000, NoiseSource(9), checkpoints=50)
        assert sum(trace.pulls) == 200_000
        values = [r for _, r in trace.checkpoints]
        assert values == sorted(values)
        assert values[-1] == pytest.approx(sum(n * g for n, g in zip(trace.pulls, env.gaps)))

    def test_optimal_arm_survives(self):
        env = BanditEnvironment([0.9, 0.1])
        survivors = [dp_se_run(env, 2, 0.01, 1.0, 10**5, NoiseSource(seed)).survivor for seed in range(50)]
        assert survivors.count(0) >= 49

    def test_preconditions(self, two_arm_env):
        with pytest.raises(DomainError):
            dp_se_run(two_arm_env, 3, 0.1, 1.0, 100, NoiseSource(1))
        with pytest.raises(DomainError):
            dp_se_run(two_arm_env, 2, 0.1, 1.0, 1, NoiseSource(1))
        with pytest.raises(DomainError):
            dp_se_run(two_arm_env, 2, 0.1, math.inf, 100, NoiseSource(1))


class TestUcb:
    def test_index_examples(self):
        assert ucb_index(0.0, 1, 1) == 0.0
        assert ucb_index(0.5, math.e**2, 4) == pytest.approx(1.5)
        assert ucb_index(0.5, 100, 50) == pytest.approx(0.929193, abs=1e-6)

    def test_unpulled_arm_is_not_scored(self):
        with pytest.raises(DomainError):
            ucb_index(0.5, 10, 0)

    def test_inflation_term(self):
        T, K, eps = 1024, 5, 0.5
        assert ucb_inflation(T, K, eps, 100, 10) == pytest.approx(10 * 10 / 0.5 * math.log(5 * 100**4) / 10)

    def test_initial_round_pulls_every_arm(self):
        env = make_environment("c2", 5)
        for trace in (
            ucb_run(env, 5, 5, NoiseSource(1)),
            dp_ucb_run(env, 5, 1.0, 5, NoiseSource(1)),
        ):
            assert trace.pulls == [1] * 5

    def test_zero_noise_without_inflation_equals_ucb(self):
        env = make_environment("c2", 3)
        private = dp_ucb_run(env, 3, 1.0, 5000, ZeroNoiseSource(4), checkpoints=25, inflation=False)
        plain = ucb_run(env, 3, 5000, ZeroNoiseSource(4), checkpoints=25)
        assert private.pulls == plain.pulls
        assert private.checkpoints == plain.checkpoints

    def test_private_ucb_pays_for_privacy(self, two_arm_env):
        private = dp_ucb_run(two_arm_env, 2, 1.0, 10**5, NoiseSource(8))
        plain = ucb_run(two_arm_env, 2, 10**5, NoiseSource(8))
        assert private.final_regret > plain.final_regret

    def test_dispatch(self, two_arm_env):
        trace = run_algorithm("ucb", two_arm_env, 100, NoiseSource(1), epsilon=1.0)
        assert trace.algorithm == "ucb"
        assert sum(trace.pulls) == 100
        with pytest.raises(ConfigError):
            run_algorithm("thompson", two_arm_env, 100, NoiseSource(1))


class TestBounds:
    def test_lemma_pull_bound(self):
        gap, beta, eps = 0.25, 1e-6, 0.5
        expected = math.log(5 * math.log(2 / gap) / beta) * (1024 / gap**2 + 96 / (eps * gap))
        assert lemma_pull_bound(5, gap, beta, eps) == pytest.approx(expected)
        assert lemma_pull_bound(5, gap, beta, eps, T=1000) == 1000

    def test_regret_bounds(self):
        assert instance_regret_bound([0.0, 0.5], math.e**2, 1.0) == pytest.approx(2 * 2 + 2 / 0.5)
        assert minimax_regret_bound(5, 10**5, 0.5) == pytest.approx(
            math.sqrt(10**5 * 5 * math.log(10**5)) + 5 * math.log(10**5) / 0.5
        )


@pytest.mark.slow
class TestStatistical:
    def test_ucb_regret_envelope(self, two_arm_env):
        regrets = [ucb_run(two_arm_env, 2, 10**5, NoiseSource(seed)).final_regret for seed in range(30)]
        reference = 2 * math.log(10**5) / 0.5
        assert reference / 3 <= statistics.fmean(regrets) <= 3 * reference

    def test_minimax_sanity(self):
        K, T, eps = 5, 10**5, 0.5
        gap = math.sqrt(K * math.log(T) / T)
        env = BanditEnvironment([0.75] + [0.75 - gap] * (K - 1))
        regrets = [dp_se_run(env, K, None, eps, T, NoiseSource(seed)).final_regret for seed in range(10)]
        assert statistics.fmean(regrets) <= 10 * minimax_regret_bound(K, T, eps)
