"""
Bernoulli 老虎机环境、四种均值设定 (c1-c4) 与伪遗憾 (pseudo-regret) 记账。
"""

from collections.abc import Sequence

import numpy as np

from .core_noise import NoiseSource
from .utils.exceptions import ConfigError, DomainError


def _check_k(K: int) -> int:
    if K < 2:
        raise DomainError(f"K 必须 ≥ 2, got {K}")
    return int(K)


def means_c1(K: int) -> list[float]:
    """最优臂 0.75，其余臂均为 0.7"""
    return [0.75] + [0.7] * (_check_k(K) - 1)


def means_c2(K: int) -> list[float]:
    """从 0.75 线性递减到 0.25"""
    K = _check_k(K)
    return [0.75 - 0.5 * i / (K - 1) for i in range(K)]


def means_c3(K: int) -> list[float]:
    """凸二次：μ_i = a(i-K)² + 0.25，a = 0.5/(K-1)²"""
    K = _check_k(K)
    a = 0.5 / (K - 1) ** 2
    return [a * (i - K) ** 2 + 0.25 for i in range(1, K + 1)]


def means_c4(K: int) -> list[float]:
    """凹二次：μ_i = a(i-1)² + 0.75，a = -0.5/(K-1)²"""
    K = _check_k(K)
    a = -0.5 / (K - 1) ** 2
    return [a * (i - 1) ** 2 + 0.75 for i in range(1, K + 1)]


SETTINGS = {
    "c1": means_c1,
    "c2": means_c2,
    "c3": means_c3,
    "c4": means_c4,
}


class BanditEnvironment:
    """
    K 个 Bernoulli 臂。构造后不可变，随机性全部来自调用方传入的 NoiseSource。

    deterministic=True 时每次拉动直接返回该臂的均值，用于冻结回归轨迹。
    """

    def __init__(self, means: Sequence[float], deterministic: bool = False, name: str = "custom"):
        means = [float(m) for m in means]
        if len(means) < 2:
            raise DomainError(f"至少需要两个臂, got {len(means)}")
        if any(not 0.0 <= m <= 1.0 for m in means):
            raise DomainError(f"均值必须位于 [0,1]: {means}")
        self.name = name
        self.deterministic = deterministic
        self.means = np.asarray(means, dtype=np.float64)
        self.means.flags.writeable = False
        # argmax 平局时取最小下标
        self.optimal = int(np.argmax(self.means))
        self.gaps = self.means[self.optimal] - self.means
        self.gaps.flags.writeable = False

    @property
    def K(self) -> int:
        return len(self.means)

    def __repr__(self):
        return f"BanditEnvironment({self.name}, K={self.K}, deterministic={self.deterministic})"

    def check_arm(self, arm: int) -> int:
        if not 0 <= arm < self.K:
            raise DomainError(f"臂下标越界: {arm} (K={self.K})")
        return arm

    def reward_tape(self, noise: NoiseSource, block: int = 4096) -> "RewardTape":
        return RewardTape(self, noise, block)


def make_environment(setting: str, K: int, deterministic: bool = False) -> BanditEnvironment:
    """按设定名称构造环境"""
    try:
        generator = SETTINGS[setting]
    except KeyError:
        raise ConfigError(f"未知设定: {setting} (可选 {', '.join(SETTINGS)})") from None
    return BanditEnvironment(generator(K), deterministic=deterministic, name=setting)


def pull(env: BanditEnvironment, arm: int, noise: NoiseSource) -> float:
    """从 noise 抽取一次 Bernoulli(μ_arm) 奖励"""
    env.check_arm(arm)
    if env.deterministic:
        return float(env.means[arm])
    return float(noise.bernoulli(env.means[arm]))


def regret_increment(env: BanditEnvironment, arm: int) -> float:
    """伪遗憾增量 Δ_arm"""
    return float(env.gaps[env.check_arm(arm)])


class RewardTape:
    """
    每个臂一条独立奖励带 (arm 号子流)。标量抽取与批量抽取消耗同一序列，
    所以配对种子下，拉动序列相同的算法看到相同的奖励。
    """

    def __init__(self, env: BanditEnvironment, noise: NoiseSource, block: int = 4096):
        self.env = env
        self.block = block
        self._streams = [noise.substream(arm) for arm in range(env.K)]
        self._buffers = [np.empty(0) for _ in range(env.K)]
        self._pos = [0] * env.K
        self.draws_per_arm = [0] * env.K

    def _bernoullis(self, arm: int, n: int) -> np.ndarray:
        if self.env.deterministic:
            return np.full(n, self.env.means[arm])
        return self._streams[arm].bernoullis(self.env.means[arm], n)

    def draw(self, arm: int) -> float:
        pos = self._pos[arm]
        buf = self._buffers[arm]
        if pos >= len(buf):
            buf = self._buffers[arm] = self._bernoullis(arm, self.block)
            pos = 0
        self._pos[arm] = pos + 1
        self.draws_per_arm[arm] += 1
        return float(buf[pos])

    def draws(self, arm: int, n: int) -> np.ndarray:
        """连续抽取 n 个奖励 (先用完缓冲区)"""
        buf = self._buffers[arm]
        pos = self._pos[arm]
        take = min(n, len(buf) - pos)
        head = buf[pos:pos + take]
        self._pos[arm] = pos + take
        self.draws_per_arm[arm] += n
        if take == n:
            return head
        return np.concatenate([head, self._bernoullis(arm, n - take)])


def checkpoint_times(T: int, n: int) -> list[int]:
    """i·T/n 四舍五入 (i = 1..n)，去重，最后一个为 T"""
    if n < 1:
        raise DomainError(f"检查点数量必须 ≥ 1, got {n}")
    return sorted({(2 * i * T + n) // (2 * n) for i in range(1, n + 1)} - {0})


class RegretAccountant:
    """
    记录每个臂的拉动次数，并在检查点处记录累计伪遗憾 Σ pulls(a)·Δ_a。
    """

    def __init__(self, env: BanditEnvironment, T: int, checkpoints: int = 100):
        self.env = env
        self.T = T
        self.pulls = np.zeros(env.K, dtype=np.int64)
        self.t = 0
        self.times = checkpoint_times(T, checkpoints)
        self.checkpoints: list[tuple[int, float]] = []
        self._next = 0

    @property
    def remaining(self) -> int:
        return self.T - self.t

    @property
    def cumulative_regret(self) -> float:
        return float(np.dot(self.pulls, self.env.gaps))

    def _snapshot(self, pulls: np.ndarray, t: int):
        self.checkpoints.append((t, float(np.dot(pulls, self.env.gaps))))
        self._next += 1

    def record(self, arm: int):
        if self.t >= self.T:
            raise DomainError(f"已达到时间上限 T={self.T}")
        self.pulls[arm] += 1
        self.t += 1
        if self._next < len(self.times) and self.t == self.times[self._next]:
            self._snapshot(self.pulls, self.t)

    def record_cycle(self, arms: Sequence[int], n: int):
        """
        按 arms 顺序轮流拉动共 n 次 (最后一轮可以不完整)，
        中途经过的检查点按部分状态记录。
        """
        if n <= 0:
            return
        if self.t + n > self.T:
            raise DomainError(f"超出时间上限 T={self.T}")
        idx = np.asarray(arms, dtype=np.int64)
        m = len(idx)
        start = self.t
        while self._next < len(self.times) and self.times[self._next] <= start + n:
            offset = self.times[self._next] - start
            pulls = self.pulls.copy()
            pulls[idx] += offset // m
            pulls[idx[:offset % m]] += 1
            self._snapshot(pulls, self.times[self._next])
        self.pulls[idx] += n // m
        self.pulls[idx[:n % m]] += 1
        self.t += n
