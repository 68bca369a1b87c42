"""
端到端验收：停止规则的准确性与停止时间、DP-SE 的拉动包络与遗憾表现、机制自检、网格可复现性。
全部标记为 slow。
"""

import asyncio
import math
import statistics

import pytest

from private_bandits.algorithms import dp_se_run, lemma_pull_bound
from private_bandits.core_noise import NoiseSource, ZeroNoiseSource
from private_bandits.env import make_environment
from private_bandits.harness import build_config, run_grid
from private_bandits.selftest import check_dp_ratio, check_fact1_grid, check_tree_variance
from private_bandits.stopping_rules import (
    StoppingRuleConfig,
    expected_halt_bound,
    run_stopping_rule_batch,
    signed_bernoulli_stream,
    summarise_halting,
)

pytestmark = pytest.mark.slow

MU = 0.4
P = (1 + MU) / 2


def stream(source):
    return signed_bernoulli_stream(P, source)


def private_rule(epsilon: float, alpha: float = 0.25, runs: int = 400, seed: int = 1):
    cfg = StoppingRuleConfig(R=1, alpha=alpha, beta=0.05, epsilon=epsilon, max_samples=1 << 26)
    return cfg, run_stopping_rule_batch("dp_exp_nas", cfg, stream, runs=runs, base_seed=seed)


@pytest.fixture(scope="module")
def unit_budget_runs():
    return private_rule(1.0)


def test_release_accuracy(unit_budget_runs):
    cfg, outcomes = unit_budget_runs
    outside = sum(1 for o in outcomes if o.capped or not 0.3 <= o.estimate <= 0.5)
    se = math.sqrt(0.05 * 0.95 / len(outcomes))
    assert outside / len(outcomes) <= 0.05 + 3 * se


def test_halting_envelope(unit_budget_runs):
    cfg, outcomes = unit_budget_runs
    summary = summarise_halting(outcomes, MU, cfg)
    bound = expected_halt_bound(cfg, MU)
    assert summary.within_bound_rate >= 0.95
    assert summary.median_halt <= bound


def test_median_halt_nonincreasing_in_epsilon():
    medians = [statistics.median(o.halt_time for o in private_rule(eps, runs=100)[1]) for eps in (0.25, 0.5, 1.0)]
    assert medians == sorted(medians, reverse=True)


def test_halting_time_scales_with_inverse_epsilon():
    # α|μ| 较大时 Hoeffding 项很小，私有项主导停止时间
    slow = statistics.fmean(o.halt_time for o in private_rule(0.25, alpha=0.7, runs=200)[1])
    fast = statistics.fmean(o.halt_time for o in private_rule(1.0, alpha=0.7, runs=200)[1])
    assert slow >= 2 * fast


def test_pull_envelope_and_optimal_survival():
    K, eps, T = 5, 0.5, 10**6
    beta = 1 / T
    env = make_environment("c2", K)
    envelope = [lemma_pull_bound(K, gap, beta, eps) for gap in env.gaps[1:]]
    within, survived = 0, 0
    for seed in range(20):
        trace = dp_se_run(env, K, beta, eps, T, NoiseSource(seed))
        within += all(n <= bound for n, bound in zip(trace.pulls[1:], envelope))
        survived += not trace.optimal_eliminated(env.optimal)
    assert within >= 19
    assert survived >= 19


def test_elimination_beats_private_ucb():
    cfg = build_config(dict(
        settings=["c2"], algorithms=["dp_se", "dp_ucb"], K=[5], epsilon=[0.25],
        T=10**6, runs=10, base_seed=5, threads=4,
    ))
    result = asyncio.run(run_grid(cfg, write=False))
    se, ucb = (s.final_mean_regret for s in result.summaries)
    assert se <= 0.5 * ucb


def test_regret_flat_after_last_elimination():
    env = make_environment("c1", 5, deterministic=True)
    trace = dp_se_run(env, 5, 1e-6, 0.5, 10**6, ZeroNoiseSource(0))
    last = max(t for _, _, t in trace.eliminations)
    after = [r for t, r in trace.checkpoints if t >= last]
    assert after
    assert all(b - a == 0 for a, b in zip(after, after[1:]))


def test_mechanism_checks():
    assert check_dp_ratio(seed=3).passed
    assert check_tree_variance(seed=3).passed
    assert check_fact1_grid().passed


def test_grid_reproducible_across_threads(tmp_path):
    base = dict(
        settings=["c3", "c4"], algorithms=["dp_se", "dp_ucb", "se", "ucb"], K=[4], epsilon=[0.5],
        T=20_000, runs=3, base_seed=99, checkpoints=20,
    )
    for threads in (1, 3):
        cfg = build_config({**base, "threads": threads, "out": str(tmp_path / f"t{threads}")})
        asyncio.run(run_grid(cfg))
    names = sorted(p.name for p in (tmp_path / "t1" / "traces").iterdir())
    assert len(names) == 24
    for name in names:
        assert (tmp_path / "t1" / "traces" / name).read_bytes() == (tmp_path / "t3" / "traces" / name).read_bytes()
