"""
`selftest` 子命令：快速检查机制层的不变量，每项返回一个 CheckResult。
"""

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .core_noise import NoiseSource, ZeroNoiseSource, fact1_holds, laplace_tail
from .stopping_rules import (
    StoppingRuleConfig,
    constant_stream,
    dp_exp_nas_run,
    dp_nas_run,
    nas_run,
)
from .tree_mechanism import TreeCounter
from .utils.logger import logger

FACT1_GRID = [(a, b) for a in (1.5, 2.0, 10.0) for b in (1e-2, 1e-3, 1e-4)]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_fact1_grid() -> CheckResult:
    failed = [(a, b) for a, b in FACT1_GRID if not fact1_holds(a, b)]
    return CheckResult("fact1 grid", not failed, f"{len(FACT1_GRID) - len(failed)}/{len(FACT1_GRID)} pairs")


def check_laplace_moments(seed: int = 1, n: int = 1_000_000, scale: float = 2.0) -> CheckResult:
    x = NoiseSource(seed, 101).laplaces(n, scale)
    variance = float(x.var())
    expected = 2 * scale * scale
    mean_ok = abs(float(x.mean())) <= 5 * math.sqrt(expected / n)
    var_ok = abs(variance / expected - 1) <= 0.05
    return CheckResult(
        "laplace moments", mean_ok and var_ok, f"mean={x.mean():.4f} var={variance:.3f} (2λ²={expected})"
    )


def check_laplace_tails(seed: int = 1, n: int = 1_000_000, scale: float = 1.0) -> CheckResult:
    x = np.abs(NoiseSource(seed, 102).laplaces(n, scale))
    worst = 0.0
    for tau in (scale, 2 * scale, 4 * scale):
        p = laplace_tail(tau, scale)
        se = math.sqrt(p * (1 - p) / n)
        worst = max(worst, abs(float((x > tau).mean()) - p) / se)
    return CheckResult("laplace tails", worst <= 4, f"max deviation {worst:.2f} SE")


def dp_log_ratio_excess(
    epsilon: float,
    sensitivity: float = 1.0,
    n: int = 200_000,
    bins: int = 20,
    seed: int = 1,
) -> float:
    """
    对相邻输入 0 与 sensitivity 各发布 n 次 value + Lap(GS/ε)，分 bins 个箱，
    返回 max(|ln(p0/p1)| - ε - 3·SE)，SE = sqrt(1/n0 + 1/n1)。结果 ≤ 0 表示通过。
    """
    scale = sensitivity / epsilon
    root = NoiseSource(seed, 103)
    y0 = root.substream(0).laplaces(n, scale)
    y1 = sensitivity + root.substream(1).laplaces(n, scale)
    edges = np.linspace(-2 * scale, sensitivity + 2 * scale, bins + 1)
    c0, _ = np.histogram(y0, bins=edges)
    c1, _ = np.histogram(y1, bins=edges)
    if (c0 == 0).any() or (c1 == 0).any():
        return math.inf
    log_ratio = np.abs(np.log(c0 / c1))
    se = np.sqrt(1.0 / c0 + 1.0 / c1)
    return float((log_ratio - epsilon - 3 * se).max())


def check_dp_ratio(seed: int = 1) -> CheckResult:
    excess = dp_log_ratio_excess(1.0, seed=seed)
    return CheckResult("laplace dp ratio", excess <= 0, f"max excess {excess:.4f}")


def tree_error_variance(
    horizon: int = 64, t: int = 32, epsilon: float = 1.0, counters: int = 2000, seed: int = 1
) -> tuple[float, float]:
    """返回 (tree_sum - raw 的样本方差, 覆盖节点数·2·(depth/ε)²)"""
    errors = np.empty(counters)
    for i in range(counters):
        counter = TreeCounter(horizon, epsilon, NoiseSource(seed, (104, i)))
        for _ in range(t):
            counter.tree_add(0.5)
        errors[i] = counter.tree_sum() - counter.prefix_raw
    expected = len(counter.covering_nodes()) * 2 * counter.noise_scale**2
    return float(errors.var(ddof=1)), expected


def check_tree_variance(seed: int = 1) -> CheckResult:
    observed, expected = tree_error_variance(seed=seed)
    ratio = observed / expected
    return CheckResult("tree variance", 0.5 <= ratio <= 1.5, f"observed/expected = {ratio:.3f}")


def check_zero_noise_regressions() -> CheckResult:
    cfg = StoppingRuleConfig(R=1.0, alpha=1.0, beta=0.1, epsilon=1.0, max_samples=100_000)
    zero = ZeroNoiseSource(0)
    halts = (
        nas_run(constant_stream(1.0), cfg).halt_time,
        dp_nas_run(constant_stream(1.0), cfg, zero).halt_time,
        dp_exp_nas_run(constant_stream(1.0), cfg, zero).halt_time,
    )
    return CheckResult("zero-noise regressions", halts == (20, 539, 512), f"halts={halts}")


CHECKS: list[Callable[[], CheckResult]] = [
    check_fact1_grid,
    check_laplace_moments,
    check_laplace_tails,
    check_dp_ratio,
    check_tree_variance,
    check_zero_noise_regressions,
]


def run_selftest() -> list[CheckResult]:
    results = []
    for check in CHECKS:
        result = check()
        if not result.passed:
            logger.error(f"selftest {result.name} 未通过: {result.detail}")
        results.append(result)
    return results
