"""
老虎机算法：DP 逐次淘汰 (DP-SE)、基于树机制的 DP-UCB，以及非隐私的 SE / UCB 参照。

每个算法接收环境与 NoiseSource，返回 RunTrace。NoiseSource 子流划分:
    0 -> 奖励带 (所有算法共用，配对比较)
    1 -> 淘汰噪声，按 (epoch, arm) 再细分
    2 -> 树机制节点噪声，按 arm 再细分
"""

import math
import threading
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from cachetools import LRUCache, cached

from .core_noise import PRNG_NAME, NoiseSource
from .env import BanditEnvironment, RegretAccountant
from .tree_mechanism import TreeCounter, tree_depth
from .utils.exceptions import ConfigError, DomainError
from .utils.logger import logger

REWARD_STREAM = 0
ELIMINATION_STREAM = 1
TREE_STREAM = 2


@dataclass(frozen=True)
class EpochAudit:
    """隐私审计记录：一个 epoch 中一个臂的样本进入一个带噪均值"""

    epoch: int
    arm: int
    samples: int
    sensitivity: float
    scale: float


@dataclass
class RunTrace:
    algorithm: str
    config: dict
    seed: int
    checkpoints: list[tuple[int, float]]
    pulls: list[int]
    eliminations: list[tuple[int, int, int]] = field(default_factory=list)  # (arm, epoch, t)
    audit: list[EpochAudit] = field(default_factory=list)
    survivor: int | None = None
    private: bool = True

    @property
    def final_regret(self) -> float:
        return self.checkpoints[-1][1] if self.checkpoints else 0.0

    @property
    def horizon(self) -> int:
        return sum(self.pulls)

    def optimal_eliminated(self, optimal: int) -> bool:
        return any(arm == optimal for arm, _, _ in self.eliminations)

    def regret_increments(self) -> list[float]:
        """相邻检查点之间的遗憾增量"""
        values = [r for _, r in self.checkpoints]
        return [b - a for a, b in zip(values, values[1:])]


# ---------------------------------------------------------------------------
# 逐次淘汰 (Successive Elimination)
# ---------------------------------------------------------------------------

_cache_lock = threading.Lock()


@cached(cache=LRUCache(maxsize=4096), lock=_cache_lock)
def epoch_length(s: int, e: int, beta: float, epsilon: float) -> int:
    """
    每个存活臂在第 e 个 epoch 的拉动次数

    Args:
        s (int): 存活臂数量
        e (int): epoch 序号 (≥1)
        beta (float): 失败概率
        epsilon (float): 隐私预算；math.inf 表示非隐私 (只保留 Hoeffding 项)

    Returns:
        int: ⌈max(32·ln(8se²/β)/Δ_e², 8·ln(4se²/β)/(ε·Δ_e))⌉ + 1，Δ_e = 2^-e
    """
    if s < 1 or e < 1:
        raise DomainError(f"s 与 e 必须 ≥ 1, got s={s}, e={e}")
    if not 0 < beta < 1:
        raise DomainError(f"β 必须位于 (0,1), got {beta}")
    if not epsilon > 0:
        raise DomainError(f"epsilon 必须为正数, got {epsilon}")
    delta = 2.0 ** -e
    hoeffding = 32 * math.log(8 * s * e * e / beta) / (delta * delta)
    privacy = 8 * math.log(4 * s * e * e / beta) / (epsilon * delta)
    return math.ceil(max(hoeffding, privacy)) + 1


@dataclass
class EpochState:
    S: list[int]
    e: int
    beta: float
    epsilon: float
    R_e: int
    h_e: float
    c_e: float
    empirical: dict[int, float] = field(default_factory=dict)
    noisy: dict[int, float] = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return 2.0 ** -self.e

    @property
    def private(self) -> bool:
        return math.isfinite(self.epsilon)

    @property
    def threshold(self) -> float:
        return 2 * self.h_e + 2 * self.c_e

    @property
    def noise_scale(self) -> float:
        return 1.0 / (self.epsilon * self.R_e)

    @classmethod
    def start(
        cls, S: Sequence[int], e: int, beta: float, epsilon: float, R_e: int | None = None
    ) -> "EpochState":
        """开始一个新 epoch，均值清零；h_e、c_e 由实际使用的 R_e 计算"""
        S = sorted(S)
        s = len(S)
        if R_e is None:
            R_e = epoch_length(s, e, beta, epsilon)
        h_e = math.sqrt(math.log(8 * s * e * e / beta) / (2 * R_e))
        c_e = math.log(4 * s * e * e / beta) / (R_e * epsilon)
        return cls(S=S, e=e, beta=beta, epsilon=epsilon, R_e=R_e, h_e=h_e, c_e=c_e)


def eliminate(state: EpochState, noise: NoiseSource) -> tuple[list[int], dict[int, float]]:
    """
    给每个存活臂的经验均值加上 Lap(1/(ε·R_e))，淘汰满足
    μ̃_max - μ̃_j > 2h_e + 2c_e 的臂。argmax 总是保留。

    Returns:
        tuple: (存活臂列表, 带噪均值)
    """
    missing = [arm for arm in state.S if arm not in state.empirical]
    if missing:
        raise DomainError(f"以下臂本 epoch 没有经验均值: {missing}")
    noisy = {}
    for arm in state.S:
        mean = state.empirical[arm]
        if state.private:
            mean += noise.substream(state.e, arm).laplace(state.noise_scale)
        noisy[arm] = mean
    best = max(noisy.values())
    survivors = [arm for arm in state.S if not best - noisy[arm] > state.threshold]
    state.noisy = noisy
    return survivors, noisy


def _successive_elimination(
    algorithm: str,
    env: BanditEnvironment,
    K: int,
    beta: float | None,
    epsilon: float,
    T: int,
    noise: NoiseSource,
    checkpoints: int,
) -> RunTrace:
    _check_run(env, K, T)
    beta = 1.0 / T if beta is None else beta
    acct = RegretAccountant(env, T, checkpoints)
    tape = env.reward_tape(noise.substream(REWARD_STREAM))
    elimination_noise = noise.substream(ELIMINATION_STREAM)
    private = math.isfinite(epsilon)

    S = list(range(K))
    eliminations: list[tuple[int, int, int]] = []
    audit: list[EpochAudit] = []
    e = 0
    while len(S) > 1 and acct.remaining > 0:
        e += 1
        state = EpochState.start(S, e, beta, epsilon)
        full = state.R_e * len(S)
        if acct.remaining < full:
            # 时间耗尽于 epoch 中途：轮流拉完剩余步数，不做淘汰
            acct.record_cycle(S, acct.remaining)
            break
        for arm in S:
            state.empirical[arm] = float(np.mean(tape.draws(arm, state.R_e)))
            audit.append(EpochAudit(
                epoch=e, arm=arm, samples=state.R_e,
                sensitivity=1.0 / state.R_e,
                scale=state.noise_scale if private else 0.0,
            ))
        acct.record_cycle(S, full)
        survivors, _ = eliminate(state, elimination_noise)
        for arm in S:
            if arm not in survivors:
                eliminations.append((arm, e, acct.t))
                logger.debug(f"[{algorithm}] epoch {e}: 淘汰臂 {arm} (t={acct.t})")
        S = survivors

    if acct.remaining > 0:
        acct.record_cycle(S, acct.remaining)

    config = _config_echo(env, T, epsilon if private else None, beta)
    return RunTrace(
        algorithm=algorithm,
        config=config,
        seed=noise.seed,
        checkpoints=acct.checkpoints,
        pulls=acct.pulls.tolist(),
        eliminations=eliminations,
        audit=audit,
        survivor=S[0] if len(S) == 1 else None,
        private=private and not noise.zero_noise,
    )


def dp_se_run(
    env: BanditEnvironment,
    K: int,
    beta: float | None,
    epsilon: float,
    T: int,
    noise: NoiseSource,
    checkpoints: int = 100,
) -> RunTrace:
    """
    DP 逐次淘汰：对存活臂按下标轮流拉动 R_e 轮，epoch 结束时加噪淘汰，
    只剩一个臂后一直拉它。总拉动次数恰好为 T。

    Args:
        env (BanditEnvironment): 环境
        K (int): 臂数量，必须与环境一致
        beta (float | None): 失败概率，None 时取 1/T
        epsilon (float): 隐私预算
        T (int): 时间上限
        noise (NoiseSource): 本次运行的随机源
        checkpoints (int): 记录的检查点数量

    Returns:
        RunTrace: 运行轨迹
    """
    if not epsilon > 0 or not math.isfinite(epsilon):
        raise DomainError(f"epsilon 必须为有限正数, got {epsilon}")
    return _successive_elimination("dp_se", env, K, beta, epsilon, T, noise, checkpoints)


def se_run(
    env: BanditEnvironment,
    K: int,
    beta: float | None,
    T: int,
    noise: NoiseSource,
    checkpoints: int = 100,
) -> RunTrace:
    """非隐私 SE：R_e 只取 Hoeffding 项，c_e = 0，不加噪声"""
    return _successive_elimination("se", env, K, beta, math.inf, T, noise, checkpoints)


# ---------------------------------------------------------------------------
# UCB
# ---------------------------------------------------------------------------


def ucb_index(mean: float, t: int, t_a: int) -> float:
    """UCB 上界 μ̄ + sqrt(2·ln t / t_a)"""
    if t_a < 1:
        raise DomainError("t_a = 0 的臂应在初始化轮中强制拉动，而不是打分")
    if t < t_a:
        raise DomainError(f"要求 t ≥ t_a, got t={t}, t_a={t_a}")
    return mean + math.sqrt(2 * math.log(t) / t_a)


@cached(cache=LRUCache(maxsize=256), lock=_cache_lock)
def inflation_coefficient(T: int, epsilon: float) -> float:
    """γ_{a,t} = coefficient·ln(K·t⁴)/t_a 中的系数 ⌈log₂T⌉²/ε"""
    depth = tree_depth(T)
    return depth * depth / epsilon


def ucb_inflation(T: int, K: int, epsilon: float, t: int, t_a: int) -> float:
    """树机制路径噪声在置信度 1 - 1/(K·t⁴) 下的包络"""
    return inflation_coefficient(T, epsilon) * math.log(K * t**4) / t_a


def _index_policy(
    algorithm: str,
    env: BanditEnvironment,
    K: int,
    T: int,
    noise: NoiseSource,
    checkpoints: int,
    epsilon: float | None,
    inflation: bool,
) -> RunTrace:
    _check_run(env, K, T)
    acct = RegretAccountant(env, T, checkpoints)
    tape = env.reward_tape(noise.substream(REWARD_STREAM))
    counters = None
    if epsilon is not None:
        counters = [
            TreeCounter(T, epsilon, noise.substream(TREE_STREAM, arm)) for arm in range(K)
        ]
    coef = inflation_coefficient(T, epsilon) if epsilon is not None and inflation else 0.0
    log_k = math.log(K)

    sums = [0.0] * K
    counts = [0] * K
    estimates = [0.0] * K  # 私有版本缓存各臂最近一次的带噪和

    def play(arm: int):
        reward = tape.draw(arm)
        counts[arm] += 1
        if counters is None:
            sums[arm] += reward
            estimates[arm] = sums[arm]
        else:
            estimates[arm] = counters[arm].tree_add(reward).tree_sum()
        acct.record(arm)

    # 初始化：每个臂先拉一次
    for arm in range(K):
        play(arm)

    for t in range(K + 1, T + 1):
        best, best_value = 0, -math.inf
        gamma_log = log_k + 4 * math.log(t) if coef else 0.0
        for arm in range(K):
            n = counts[arm]
            value = ucb_index(estimates[arm] / n, t, n)
            if coef:
                value += coef * gamma_log / n
            if value > best_value:
                best, best_value = arm, value
        play(best)

    config = _config_echo(env, T, epsilon, None)
    if epsilon is not None:
        config["ucb_inflation"] = inflation
    return RunTrace(
        algorithm=algorithm,
        config=config,
        seed=noise.seed,
        checkpoints=acct.checkpoints,
        pulls=acct.pulls.tolist(),
        private=epsilon is not None and not noise.zero_noise,
    )


def dp_ucb_run(
    env: BanditEnvironment,
    K: int,
    epsilon: float,
    T: int,
    noise: NoiseSource,
    checkpoints: int = 100,
    inflation: bool = True,
) -> RunTrace:
    """
    DP-UCB：每个臂一个预算为 ε 的 TreeCounter (每步奖励只进入一个臂的计数器)，
    指标为带噪均值 + sqrt(2 ln t/t_a) + γ_{a,t}，平局取最小下标。

    inflation=False 去掉 γ 项，只用于与非隐私 UCB 的对照。
    """
    if not epsilon > 0 or not math.isfinite(epsilon):
        raise DomainError(f"epsilon 必须为有限正数, got {epsilon}")
    return _index_policy("dp_ucb", env, K, T, noise, checkpoints, epsilon, inflation)


def ucb_run(
    env: BanditEnvironment, K: int, T: int, noise: NoiseSource, checkpoints: int = 100
) -> RunTrace:
    """标准 UCB"""
    return _index_policy("ucb", env, K, T, noise, checkpoints, None, False)


# ---------------------------------------------------------------------------
# 理论包络 (regret / pull bounds)
# ---------------------------------------------------------------------------


def lemma_pull_bound(K: int, gap: float, beta: float, epsilon: float, T: int | None = None) -> float:
    """
    DP-SE 对次优臂拉动次数的高概率上界
    ln(K·ln(2/Δ)/β)·(1024/Δ² + 96/(εΔ))，给定 T 时与 T 取小。
    """
    if not 0 < gap <= 1:
        raise DomainError(f"gap 必须位于 (0,1], got {gap}")
    bound = math.log(K * math.log(2 / gap) / beta) * (1024 / gap**2 + 96 / (epsilon * gap))
    return bound if T is None else min(T, bound)


def instance_regret_bound(gaps: Sequence[float], T: int, epsilon: float) -> float:
    """K·ln T/ε + Σ_{Δ_a>0} ln T/Δ_a (不含常数)"""
    log_t = math.log(T)
    return len(gaps) * log_t / epsilon + sum(log_t / g for g in gaps if g > 0)


def minimax_regret_bound(K: int, T: int, epsilon: float) -> float:
    """sqrt(T·K·ln T) + K·ln T/ε (不含常数)"""
    log_t = math.log(T)
    return math.sqrt(T * K * log_t) + K * log_t / epsilon


# ---------------------------------------------------------------------------


ALGORITHMS = ("dp_se", "dp_ucb", "se", "ucb")


def run_algorithm(
    name: str,
    env: BanditEnvironment,
    T: int,
    noise: NoiseSource,
    epsilon: float | None = None,
    beta: float | None = None,
    checkpoints: int = 100,
    ucb_inflation: bool = True,
) -> RunTrace:
    """按名称分派，供 harness 与 CLI 使用；非隐私算法忽略 epsilon"""
    K = env.K
    if name == "dp_se":
        return dp_se_run(env, K, beta, epsilon, T, noise, checkpoints)
    if name == "dp_ucb":
        return dp_ucb_run(env, K, epsilon, T, noise, checkpoints, ucb_inflation)
    if name == "se":
        return se_run(env, K, beta, T, noise, checkpoints)
    if name == "ucb":
        return ucb_run(env, K, T, noise, checkpoints)
    raise ConfigError(f"未知算法: {name} (可选 {', '.join(ALGORITHMS)})")


def _check_run(env: BanditEnvironment, K: int, T: int):
    if K != env.K:
        raise DomainError(f"K={K} 与环境的臂数 {env.K} 不一致")
    if T < K:
        raise DomainError(f"要求 T ≥ K, got T={T}, K={K}")


def _config_echo(env: BanditEnvironment, T: int, epsilon: float | None, beta: float | None) -> dict:
    return {
        "setting": env.name,
        "K": env.K,
        "T": T,
        "epsilon": epsilon,
        "beta": beta,
        "deterministic": env.deterministic,
        "prng": PRNG_NAME,
    }
