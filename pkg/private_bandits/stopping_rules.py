"""
停止规则 (stopping rules)：非隐私 NAS 与两个 ε-DP 版本。

三个规则都是拉取式的流式估计器：每一步向 stream 请求一个样本 (next(stream))，
样本必须落在 [-R, R] 内。μ = 0 时理论上永不停止，所以 max_samples 是必填上限，
达到上限时返回 capped 结果。
"""

import itertools
import math
import statistics
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field

from pydantic import BaseModel, ConfigDict, Field

from .core_noise import NoiseSource, ZeroNoiseSource
from .utils.exceptions import DomainError, StreamRangeError
from .utils.logger import logger

# NoiseSource 子流编号：阈值噪声 B、查询噪声 A_t、发布噪声 L 互不干扰
THRESHOLD_STREAM = 0
QUERY_STREAM = 1
RELEASE_STREAM = 2

# run_stopping_rule_batch 中每次运行的两个子流
SAMPLE_STREAM = 0
MECHANISM_STREAM = 1


class StoppingRuleConfig(BaseModel):
    """(α, β)-停止规则的参数；非隐私规则不设置 epsilon"""

    model_config = ConfigDict(frozen=True)

    R: float = Field(default=1.0, gt=0, description="样本落在 [-R, R]")
    alpha: float = Field(gt=0, le=1, description="相对精度")
    beta: float = Field(gt=0, lt=1, description="失败概率")
    epsilon: float | None = Field(default=None, gt=0, description="隐私预算")
    max_samples: int = Field(default=1_000_000, ge=1)

    def require_epsilon(self) -> float:
        if self.epsilon is None:
            raise DomainError("私有停止规则需要设置 epsilon")
        return self.epsilon


@dataclass(frozen=True)
class StoppingRuleOutcome:
    halt_time: int
    estimate: float | None
    capped: bool
    rule: str = "nas"
    config: dict = field(default_factory=dict)
    queries: int = 0  # 停止条件被评估的次数

    @property
    def valid(self) -> bool:
        return not self.capped


@dataclass
class DpNasState:
    """算法运行时状态：样本计数、部分和与三个噪声尺度"""

    sigma1: float
    sigma2: float
    sigma3: float
    B: float = 0.0
    t: int = 0
    running_sum: float = 0.0
    k: int = 0

    @classmethod
    def for_config(cls, cfg: StoppingRuleConfig) -> "DpNasState":
        eps = cfg.require_epsilon()
        return cls(sigma1=12 * cfg.R / eps, sigma2=12 * cfg.R / eps, sigma3=4 * cfg.R / eps)

    @property
    def mean(self) -> float:
        return self.running_sum / self.t


def nas_radius(t: int, cfg: StoppingRuleConfig) -> float:
    """置信度 1-β/(2t²) 的 Hoeffding 半径"""
    return cfg.R * math.sqrt(math.log(4 * t * t / cfg.beta) / (2 * t))


def dp_nas_radius(m: int, t: int, cfg: StoppingRuleConfig) -> float:
    """h_t = R·sqrt((2/t)·ln(16m²/β))；逐步版本 m=t，倍增版本 m=k"""
    return cfg.R * math.sqrt((2.0 / t) * math.log(16 * m * m / cfg.beta))


def dp_slack(m: int, state: DpNasState, cfg: StoppingRuleConfig) -> float:
    """c_t = σ1·ln(4/β) + σ2·ln(8m²/β) + (σ3/α)·ln(4/β)"""
    log4 = math.log(4 / cfg.beta)
    return (
        state.sigma1 * log4
        + state.sigma2 * math.log(8 * m * m / cfg.beta)
        + (state.sigma3 / cfg.alpha) * log4
    )


def _next_sample(stream: Iterator[float], R: float, t: int) -> float | None:
    try:
        x = float(next(stream))
    except StopIteration:
        return None
    if not -R <= x <= R:
        raise StreamRangeError(f"样本 {x} 超出 [-{R}, {R}]", sample=x, t=t)
    return x


def _capped(rule: str, t: int, cfg: StoppingRuleConfig, queries: int) -> StoppingRuleOutcome:
    if t == 0:
        raise DomainError("样本流为空")
    logger.warning(f"{rule} 在 {t} 个样本内没有停止，返回 capped 结果")
    return StoppingRuleOutcome(
        halt_time=t, estimate=None, capped=True, rule=rule,
        config=cfg.model_dump(), queries=queries,
    )


def nas_run(stream: Iterable[float], cfg: StoppingRuleConfig) -> StoppingRuleOutcome:
    """
    非隐私 NAS：在第一个满足 |X̄_t| ≥ h_t·(1/α + 1) 的 t 停止，返回 X̄_t。

    Args:
        stream: 样本来源，取值在 [-R, R]
        cfg (StoppingRuleConfig): 参数 (epsilon 被忽略)

    Returns:
        StoppingRuleOutcome: 停止时间与估计值
    """
    stream = iter(stream)
    inflation = 1.0 / cfg.alpha + 1.0
    total = 0.0
    for t in range(1, cfg.max_samples + 1):
        x = _next_sample(stream, cfg.R, t)
        if x is None:
            return _capped("nas", t - 1, cfg, t - 1)
        total += x
        mean = total / t
        if abs(mean) >= nas_radius(t, cfg) * inflation:
            return StoppingRuleOutcome(
                halt_time=t, estimate=mean, capped=False, rule="nas",
                config=cfg.model_dump(), queries=t,
            )
    return _capped("nas", cfg.max_samples, cfg, cfg.max_samples)


def dp_nas_run(
    stream: Iterable[float], cfg: StoppingRuleConfig, noise: NoiseSource
) -> StoppingRuleOutcome:
    """
    DP-NAS：稀疏向量技术 (SVT) 包裹的 NAS。

    每一步抽取新的 A_t ~ Lap(σ2)，开始时抽取一次 B ~ Lap(σ1)，
    直到 |X̄_t| ≥ h_t(1+1/α) + (c_t + B + A_t)/t；停止后抽取 L ~ Lap(σ3)
    并发布 X̄_t + L/t。
    """
    stream = iter(stream)
    state = DpNasState.for_config(cfg)
    state.B = noise.substream(THRESHOLD_STREAM).laplace(state.sigma1)
    query_noise = noise.substream(QUERY_STREAM)
    inflation = 1.0 + 1.0 / cfg.alpha

    while state.t < cfg.max_samples:
        t = state.t + 1
        a_t = query_noise.laplace(state.sigma2)
        x = _next_sample(stream, cfg.R, t)
        if x is None:
            return _capped("dp_nas", state.t, cfg, state.t)
        state.t = t
        state.running_sum += x
        mean = state.mean
        h_t = dp_nas_radius(t, t, cfg)
        c_t = dp_slack(t, state, cfg)
        if abs(mean) >= h_t * inflation + (c_t + state.B + a_t) / t:
            return _release("dp_nas", state, cfg, noise, queries=t)
    return _capped("dp_nas", state.t, cfg, state.t)


def dp_exp_nas_run(
    stream: Iterable[float], cfg: StoppingRuleConfig, noise: NoiseSource
) -> StoppingRuleOutcome:
    """
    DP 指数 NAS：与 DP-NAS 相同，但只在 t = 2^k 时查询 SVT，
    c_t 与 h_t 中的 t² 换成 k²。停止时间总是 2 的幂 (capped 除外)。
    """
    stream = iter(stream)
    state = DpNasState.for_config(cfg)
    state.B = noise.substream(THRESHOLD_STREAM).laplace(state.sigma1)
    query_noise = noise.substream(QUERY_STREAM)
    inflation = 1.0 + 1.0 / cfg.alpha
    queries = 0

    while True:
        state.k += 1
        target = 2 ** state.k
        while state.t < target:
            if state.t >= cfg.max_samples:
                return _capped("dp_exp_nas", state.t, cfg, queries)
            x = _next_sample(stream, cfg.R, state.t + 1)
            if x is None:
                return _capped("dp_exp_nas", state.t, cfg, queries)
            state.t += 1
            state.running_sum += x

        t, k = state.t, state.k
        a_t = query_noise.laplace(state.sigma2)
        queries += 1
        c_t = dp_slack(k, state, cfg)
        h_t = dp_nas_radius(k, t, cfg)
        if abs(state.mean) >= h_t * inflation + (c_t + state.B + a_t) / t:
            return _release("dp_exp_nas", state, cfg, noise, queries=queries)


def _release(
    rule: str, state: DpNasState, cfg: StoppingRuleConfig, noise: NoiseSource, queries: int
) -> StoppingRuleOutcome:
    # L 在停止之后才抽取
    L = noise.substream(RELEASE_STREAM).laplace(state.sigma3)
    return StoppingRuleOutcome(
        halt_time=state.t,
        estimate=state.mean + L / state.t,
        capped=False,
        rule=rule,
        config=cfg.model_dump(),
        queries=queries,
    )


def expected_halt_bound(cfg: StoppingRuleConfig, mu: float) -> int:
    """
    倍增版本以 1-β 概率在 t_U = 2000·(t0 + t1 + t2) 之前停止。

    Args:
        cfg (StoppingRuleConfig): 需要 epsilon 且 β ≤ 0.08
        mu (float): 真实均值，不能为 0

    Returns:
        int: 向上取整的 t_U
    """
    if mu == 0:
        raise DomainError("μ = 0 时停止规则不会停止")
    if cfg.beta > 0.08:
        raise DomainError(f"停止时间界要求 β ≤ 0.08, got {cfg.beta}")
    eps = cfg.require_epsilon()
    R, alpha, beta, m = cfg.R, cfg.alpha, cfg.beta, abs(mu)

    # 内层 log 的参数不足 1 时截断为 1
    loglog = math.log(max((1 / beta) * math.log(R / (alpha * m)), 1.0))
    t0 = R * R * loglog / (alpha * alpha * m * m)
    t1 = R * loglog / (eps * m)
    t2 = R * math.log(1 / beta) / (eps * alpha * m)
    return math.ceil(2000 * (t0 + t1 + t2))


# ---------------------------------------------------------------------------
# 样本流 (sample sources)
# ---------------------------------------------------------------------------


def constant_stream(value: float) -> Iterator[float]:
    return itertools.repeat(float(value))


def trace_stream(values: Iterable[float]) -> Iterator[float]:
    """回放录制好的样本序列，耗尽后规则返回 capped"""
    return iter(list(values))


def bernoulli_stream(p: float, noise: NoiseSource, chunk: int = 4096) -> Iterator[float]:
    """Bernoulli(p) 样本，按块从 noise 中抽取"""
    while True:
        yield from noise.bernoullis(p, chunk).tolist()


def signed_bernoulli_stream(p: float, noise: NoiseSource, chunk: int = 4096) -> Iterator[float]:
    """Bernoulli(p) 映射到 {-1, +1}，均值 2p-1，R = 1"""
    for b in bernoulli_stream(p, noise, chunk):
        yield 2.0 * b - 1.0


RULES: dict[str, Callable[..., StoppingRuleOutcome]] = {
    "nas": lambda stream, cfg, noise: nas_run(stream, cfg),
    "dp_nas": dp_nas_run,
    "dp_exp_nas": dp_exp_nas_run,
}


def run_stopping_rule_batch(
    rule: str,
    cfg: StoppingRuleConfig,
    stream_factory: Callable[[NoiseSource], Iterable[float]],
    runs: int,
    base_seed: int = 0,
    zero_noise: bool = False,
) -> list[StoppingRuleOutcome]:
    """
    以 (base_seed, run) 为种子重复运行某个停止规则。

    Args:
        rule (str): "nas" | "dp_nas" | "dp_exp_nas"
        cfg (StoppingRuleConfig): 参数
        stream_factory: 接收样本子流、返回样本流的函数
        runs (int): 运行次数
        base_seed (int): 基础种子；相同种子在不同 ε 下复用同一样本带
        zero_noise (bool): 机制噪声置零 (仅调试)

    Returns:
        list[StoppingRuleOutcome]: 每次运行的结果
    """
    if rule not in RULES:
        raise DomainError(f"未知停止规则: {rule}")
    source_cls = ZeroNoiseSource if zero_noise else NoiseSource
    outcomes = []
    for run in range(runs):
        root = source_cls(base_seed, run)
        stream = stream_factory(root.substream(SAMPLE_STREAM))
        outcomes.append(RULES[rule](stream, cfg, root.substream(MECHANISM_STREAM)))
    capped = sum(o.capped for o in outcomes)
    logger.info(f"{rule}: {runs} 次运行完成, capped={capped}")
    return outcomes


@dataclass(frozen=True)
class HaltingSummary:
    runs: int
    capped: int
    mean_halt: float
    median_halt: float
    failure_rate: float  # 估计值落在 (1±α)μ 之外 (capped 计为失败)
    within_bound_rate: float | None


def summarise_halting(
    outcomes: list[StoppingRuleOutcome], mu: float, cfg: StoppingRuleConfig
) -> HaltingSummary:
    if not outcomes:
        raise DomainError("没有可汇总的运行结果")
    halts = [o.halt_time for o in outcomes]
    failures = sum(
        1 for o in outcomes if o.capped or abs(o.estimate - mu) > cfg.alpha * abs(mu)
    )
    within = None
    if cfg.epsilon is not None and mu != 0 and cfg.beta <= 0.08:
        bound = expected_halt_bound(cfg, mu)
        within = sum(1 for o in outcomes if not o.capped and o.halt_time <= bound) / len(outcomes)
    return HaltingSummary(
        runs=len(outcomes),
        capped=sum(o.capped for o in outcomes),
        mean_halt=statistics.fmean(halts),
        median_halt=statistics.median(halts),
        failure_rate=failures / len(outcomes),
        within_bound_rate=within,
    )
