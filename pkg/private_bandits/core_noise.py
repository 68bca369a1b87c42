"""
随机数与 Laplace 分布原语 (Randomness and Laplace primitives)

所有对数均为自然对数；只有树机制的深度使用 log2。
"""

import math

import numpy as np

from .utils.exceptions import DomainError

PRNG_NAME = "numpy.PCG64/SeedSequence"

# 0 不在 (0,1) 内，用最小正浮点数代替；标量与批量路径保持一致
_TINY = float(np.nextafter(0.0, 1.0))


def check_scale(scale: float) -> float:
    """LaplaceScale 不变量: scale > 0"""
    if not scale > 0 or math.isnan(scale):
        raise DomainError(f"Laplace scale 必须为正数, got {scale}")
    return float(scale)


def laplace_inverse_cdf(u: float, scale: float) -> float:
    """
    Laplace(0, scale) 的逆分布函数 (inverse CDF)

    Args:
        u (float): (0,1) 内的均匀随机数
        scale (float): Laplace 尺度 λ

    Returns:
        float: -λ·sign(u-½)·ln(1-2|u-½|)
    """
    if not 0.0 < u < 1.0:
        raise DomainError(f"u 必须位于 (0,1) 内, got {u}")
    check_scale(scale)
    d = u - 0.5
    if d == 0.0:
        return 0.0
    return -scale * math.copysign(1.0, d) * math.log1p(-2.0 * abs(d))


def laplace_tail(tau: float, scale: float) -> float:
    """Pr[|X| > τ] = exp(-τ/λ)"""
    if tau < 0:
        raise DomainError(f"τ 必须非负, got {tau}")
    check_scale(scale)
    return math.exp(-tau / scale)


def hoeffding_radius(t: int, R: float, delta: float) -> float:
    """
    Hoeffding 置信半径 h，使 Pr[|X̄_t - μ| ≥ h] ≤ δ

    Args:
        t (int): 样本数 (≥1)
        R (float): 支撑半宽
        delta (float): 失败概率 (0,1)

    Returns:
        float: R·sqrt(ln(2/δ)/(2t))
    """
    if t < 1:
        raise DomainError(f"t 必须 ≥ 1, got {t}")
    if not R > 0:
        raise DomainError(f"R 必须为正数, got {R}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"δ 必须位于 (0,1) 内, got {delta}")
    return R * math.sqrt(math.log(2.0 / delta) / (2.0 * t))


def fact1_lhs(a: float, x: float) -> float:
    """ln(a·ln x)/x，a > 1, x > e"""
    if not a > 1:
        raise DomainError(f"a 必须 > 1, got {a}")
    if not x > math.e:
        raise DomainError(f"x 必须 > e, got {x}")
    return math.log(a * math.log(x)) / x


def fact1_holds(a: float, b: float) -> bool:
    """在 x=ln(a·ln(1/b))/b 处 lhs > b，在两倍处 lhs < b"""
    x = math.log(a * math.log(1.0 / b)) / b
    return fact1_lhs(a, x) > b and fact1_lhs(a, 2.0 * x) < b


class NoiseSource:
    """
    可复现的随机源。相同 (seed, stream_id) 产生相同序列；
    不同 stream_id 之间的独立性由 numpy SeedSequence 的 spawn_key 保证。
    """

    zero_noise = False

    def __init__(self, seed: int, stream_id: int | tuple[int, ...] = ()):
        if isinstance(stream_id, int):
            stream_id = (stream_id,)
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = tuple(int(s) for s in stream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        self._rng = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"{self.__class__.__name__}(seed={self.seed}, stream_id={self.stream_id})"

    def substream(self, *ids: int) -> "NoiseSource":
        """派生一个独立子流"""
        return self.__class__(self.seed, self.stream_id + tuple(ids))

    def uniform(self) -> float:
        u = float(self._rng.random())
        return u if u > 0.0 else _TINY

    def uniforms(self, n: int) -> np.ndarray:
        u = self._rng.random(n)
        u[u == 0.0] = _TINY
        return u

    def laplace(self, scale: float) -> float:
        return laplace_inverse_cdf(self.uniform(), scale)

    def laplaces(self, n: int, scale: float) -> np.ndarray:
        check_scale(scale)
        d = self.uniforms(n) - 0.5
        return -scale * np.sign(d) * np.log1p(-2.0 * np.abs(d))

    def bernoulli(self, p: float) -> int:
        return 1 if self.uniform() < p else 0

    def bernoullis(self, p: float, n: int) -> np.ndarray:
        return (self.uniforms(n) < p).astype(np.float64)

    def describe(self) -> dict:
        return {
            "prng": PRNG_NAME,
            "seed": self.seed,
            "stream_id": list(self.stream_id),
            "zero_noise": self.zero_noise,
        }


class ZeroNoiseSource(NoiseSource):
    """调试用：Laplace 噪声恒为 0，均匀/伯努利抽样照常"""

    zero_noise = True

    def laplace(self, scale: float) -> float:
        return 0.0

    def laplaces(self, n: int, scale: float) -> np.ndarray:
        return np.zeros(n)
