class SimulationError(Exception):
    """基本异常类，其他模拟器异常都会继承这个类"""

    def display_error(self):
        """显示错误信息"""
        return f"Error: {self.args[0] if self.args else self.__class__.__name__}."


class DomainError(SimulationError, ValueError):
    """参数不在定义域内时抛出 (precondition violation)"""

    def display_error(self):
        return f"Domain Error: {self.args[0]}."


class StreamRangeError(SimulationError, ValueError):
    """样本超出 [-R, R] 时抛出"""

    def __init__(self, message, sample=None, t=None):
        super().__init__(message)
        self.sample = sample
        self.t = t

    def display_error(self):
        return f"Stream Range Error: {self.args[0]}." + (
            f" Sample #{self.t}." if self.t is not None else ""
        )


class CapacityError(SimulationError):
    """计数器写满 horizon 后继续写入时抛出"""

    def display_error(self):
        return f"Capacity Error: {self.args[0]}."


class CounterStateError(SimulationError):
    """在空计数器上查询时抛出"""

    def display_error(self):
        return f"Counter State Error: {self.args[0]}."


class ConfigError(SimulationError):
    """配置无效时抛出，CLI 以退出码 2 结束"""

    def display_error(self):
        return f"Config Error: {self.args[0]}."


class OutputError(SimulationError):
    """写入或读取输出文件失败时抛出，附带文件路径"""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path

    def display_error(self):
        return f"Output Error: {self.args[0]}." + (f" Path: {self.path}." if self.path else "")


class CompareError(SimulationError):
    """两组汇总的单元格不匹配时抛出"""

    def display_error(self):
        return f"Compare Error: {self.args[0]}."
