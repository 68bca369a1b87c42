"""
树机制 (binary counting mechanism)：对有界奖励流发布带噪前缀和。

节点以 (level, end) 标识，level j 的节点覆盖 (end - 2^j, end]。
只使用 level 0..depth-1，所以每个元素恰好属于 depth 个节点；
前缀 [1, t] 由从顶层向下贪心选取的对齐块组成，顶层最多使用两次。
"""

from .core_noise import NoiseSource
from .utils.exceptions import CapacityError, CounterStateError, DomainError


def tree_depth(horizon: int) -> int:
    """⌈log₂ horizon⌉，至少为 1"""
    return max(1, (horizon - 1).bit_length())


class TreeCounter:
    """
    单个数据流的私有计数器。节点噪声在节点完整时从 noise 中按完成顺序抽取，
    完成顺序只取决于 count，因此结果与查询顺序无关。

    内部只保存当前前缀的分解 (一个按层级递减的栈)，被更高层节点覆盖的子节点立即丢弃。
    """

    def __init__(self, horizon: int, epsilon: float, noise: NoiseSource, chunk: int = 256):
        if horizon < 1:
            raise DomainError(f"horizon 必须 ≥ 1, got {horizon}")
        if not epsilon > 0:
            raise DomainError(f"epsilon 必须为正数, got {epsilon}")
        self.horizon = int(horizon)
        self.epsilon = float(epsilon)
        self.depth = tree_depth(self.horizon)
        self.noise_scale = self.depth / self.epsilon
        self.count = 0
        self.prefix_raw = 0.0

        self._noise = noise
        self._chunk = max(1, min(chunk, 2 * self.horizon))
        self._buffer: list[float] = []
        self._stack: list[tuple[int, int, float]] = []  # (level, end, noise)
        self._noise_total = 0.0

        # 统计
        self.nodes_materialized = 0
        self.queries = 0
        self.last_query_nodes = 0

    def __repr__(self):
        return (
            f"TreeCounter(horizon={self.horizon}, epsilon={self.epsilon}, "
            f"count={self.count}, depth={self.depth})"
        )

    def _draw(self) -> float:
        if not self._buffer:
            self._buffer = self._noise.laplaces(self._chunk, self.noise_scale).tolist()
            self._buffer.reverse()
        self.nodes_materialized += 1
        return self._buffer.pop()

    def tree_add(self, value: float) -> "TreeCounter":
        """
        插入一个 [0,1] 内的值，并为新完成的节点抽取噪声。

        Raises:
            CapacityError: count 已达到 horizon
            DomainError: value 不在 [0,1]
        """
        if self.count >= self.horizon:
            raise CapacityError(f"计数器已满 (horizon={self.horizon})")
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"value 必须位于 [0,1], got {value}")

        t = self.count + 1
        top = min((t & -t).bit_length() - 1, self.depth - 1)
        # 本步完成 level 0..top 的节点，各抽一次噪声；只保留最高的那个
        node_noise = 0.0
        for _ in range(top + 1):
            node_noise = self._draw()
        while self._stack and self._stack[-1][0] < top:
            self._noise_total -= self._stack.pop()[2]
        self._stack.append((top, t, node_noise))
        self._noise_total += node_noise

        self.count = t
        self.prefix_raw += value
        return self

    def tree_sum(self) -> float:
        """原始前缀和加上覆盖 [1, count] 的节点噪声"""
        if self.count == 0:
            raise CounterStateError("计数器为空，无法查询前缀和")
        self.queries += 1
        self.last_query_nodes = len(self._stack)
        return self.prefix_raw + self._noise_total

    @property
    def noise_error(self) -> float:
        return self._noise_total

    def covering_nodes(self, t: int | None = None) -> list[tuple[int, int]]:
        """前缀 [1, t] 的节点分解 (默认 t = count)"""
        t = self.count if t is None else t
        if not 0 <= t <= self.horizon:
            raise DomainError(f"t 必须位于 [0, {self.horizon}], got {t}")
        nodes = []
        pos = 0
        for level in range(self.depth - 1, -1, -1):
            width = 1 << level
            while pos + width <= t:
                pos += width
                nodes.append((level, pos))
        return nodes

    def nodes_containing(self, i: int) -> list[tuple[int, int]]:
        """第 i 个元素 (1 起) 所在的全部节点，即从叶到根的路径"""
        if not 1 <= i <= self.horizon:
            raise DomainError(f"i 必须位于 [1, {self.horizon}], got {i}")
        return [(j, -(-i // (1 << j)) << j) for j in range(self.depth)]
