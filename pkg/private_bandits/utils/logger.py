import contextlib
import datetime
import logging
import threading
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path

from rich.logging import RichHandler

LOGGER_NAME = "private_bandits"
FILE_FORMAT = "%(asctime)s [%(threadName)s] %(levelname)s %(task)s%(message)s"
RICH_KEYWORDS = ["epoch", "seed", "cell", "capped", "zero-noise"]

_task_context = threading.local()


class Singleton(type):
    """每个类只保留一个实例；网格工作线程共享同一个 LogManager"""

    _instances: dict = {}
    _lock = threading.Lock()

    def __call__(cls, *args, **kwargs):
        with cls._lock:
            if cls not in cls._instances:
                cls._instances[cls] = super().__call__(*args, **kwargs)
        return cls._instances[cls]

    def reset_instance(cls):
        with cls._lock:
            cls._instances.pop(cls, None)


class TaskContextFilter(logging.Filter):
    """把当前线程正在执行的网格任务 (cell/seed) 写进日志记录"""

    def filter(self, record):
        label = getattr(_task_context, "label", None)
        record.task = f"[{label}] " if label else ""
        return True


@contextlib.contextmanager
def task_context(label: str):
    """
    在 with 块内，本线程产生的日志都带上 label

    Args:
        label (str): 例如 "c2/dp_se/K5/eps0.25 run 3"
    """
    previous = getattr(_task_context, "label", None)
    _task_context.label = label
    try:
        yield
    finally:
        _task_context.label = previous


class LogManager(metaclass=Singleton):
    def __init__(self):
        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        self.logger.addFilter(TaskContextFilter())
        self.log_dir: Path | None = None

    def setup_logging(self, level=logging.INFO, log_to_console=False, log_path=None):
        self.shutdown()
        self.logger.setLevel(level)

        if log_to_console:
            console = RichHandler(
                show_time=False,
                show_path=False,
                markup=True,
                keywords=(RichHandler.KEYWORDS or []) + RICH_KEYWORDS,
                rich_tracebacks=True,
            )
            console.setFormatter(logging.Formatter("%(task)s%(message)s"))
            self.logger.addHandler(console)

        if log_path:
            self.log_dir = Path(log_path)
            self.log_dir.mkdir(parents=True, exist_ok=True)
            name = datetime.datetime.now().strftime("simulate-%Y-%m-%d-%H-%M-%S.log")
            fh = TimedRotatingFileHandler(
                self.log_dir / name, when="midnight", backupCount=30, encoding="utf-8"
            )
            fh.setFormatter(logging.Formatter(FILE_FORMAT))
            self.logger.addHandler(fh)

    def clean_logs(self, keep_last_n=10):
        """按修改时间保留最近 n 个日志文件"""
        if not self.log_dir:
            return
        logs = sorted(self.log_dir.glob("simulate-*.log"), key=lambda p: p.stat().st_mtime)
        stale = logs if keep_last_n == 0 else logs[:-keep_last_n]
        for path in stale:
            try:
                path.unlink()
            except OSError as exc:
                self.logger.warning(f"无法删除旧日志 {path}: {exc}")

    def shutdown(self):
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)


def log_setup(log_to_console=True, log_path=None, level=logging.INFO):
    """
    配置共享 logger。导入时只挂控制台输出，文件日志由 CLI 的 --log-dir 打开。

    Args:
        log_to_console (bool): 是否输出到控制台 (rich)
        log_path (str | Path | None): 日志目录，None 表示不写文件
        level (int): 日志级别

    Returns:
        logging.Logger: 配置好的 logger
    """
    manager = LogManager()
    if manager.logger.handlers and log_path is None:
        manager.logger.setLevel(level)
        return manager.logger

    manager.setup_logging(level=level, log_to_console=log_to_console, log_path=log_path)
    if log_path:
        manager.clean_logs(100)
    return manager.logger


logger = log_setup()
