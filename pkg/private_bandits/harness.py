"""
实验网格：配置解析、种子派生、并行执行、汇总、比较与输出。
"""

import asyncio
import math
import multiprocessing
from collections.abc import Iterator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .algorithms import ALGORITHMS, RunTrace, lemma_pull_bound, run_algorithm
from .core_noise import PRNG_NAME, NoiseSource, ZeroNoiseSource
from .emitters import (
    CellSummary,
    TraceRow,
    emit_trace_csv,
    format_summary_csv,
    format_summary_json,
    load_summary_json,
    write_text_atomic,
)
from .env import SETTINGS, make_environment
from .utils.exceptions import CompareError, ConfigError, OutputError
from .utils.logger import log_setup, logger, task_context
from .utils.utils import ensure_path, get_resource_path, load_yaml, merge_config, stable_hash64

SEED_MASK = (1 << 63) - 1
CONFIG_SECTIONS = ("bandit", "stopping_rule", "logging")
UCB_INFLATION_FORMULA = "ceil(log2 T)^2 * ln(K * t^4) / (epsilon * t_a)"


class ExperimentConfig(BaseModel):
    """网格实验配置；列表字段也接受标量或逗号分隔字符串"""

    model_config = ConfigDict(extra="forbid")

    settings: list[str] = Field(default_factory=lambda: ["c2"])
    algorithms: list[str] = Field(default_factory=lambda: ["dp_se", "dp_ucb"])
    K: list[int] = Field(default_factory=lambda: [5])
    epsilon: list[float] = Field(default_factory=lambda: [0.25])
    T: int = Field(default=1_000_000, ge=2)
    runs: int = Field(default=10, ge=1)
    base_seed: int = Field(default=0, ge=0)
    checkpoints: int = Field(default=100, ge=2)
    beta: float | None = Field(default=None, gt=0, lt=1)
    out: str = "results"
    threads: int = Field(default=1, ge=1)
    zero_noise: bool = False
    deterministic: bool = False
    ucb_inflation: bool = True

    @field_validator("settings", "algorithms", "K", "epsilon", mode="before")
    @classmethod
    def _as_list(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        if isinstance(value, (int, float)):
            return [value]
        return value

    @field_validator("settings", "algorithms", "K", "epsilon")
    @classmethod
    def _no_duplicates(cls, value):
        seen, repeated = set(), []
        for item in value:
            if item in seen and item not in repeated:
                repeated.append(item)
            seen.add(item)
        if repeated:
            raise ValueError(f"列表中有重复项 {repeated}")
        return value

    @field_validator("settings")
    @classmethod
    def _known_settings(cls, value):
        unknown = [s for s in value if s not in SETTINGS]
        if unknown or not value:
            raise ValueError(f"未知设定 {unknown} (可选 {', '.join(SETTINGS)})")
        return value

    @field_validator("algorithms")
    @classmethod
    def _known_algorithms(cls, value):
        unknown = [a for a in value if a not in ALGORITHMS]
        if unknown or not value:
            raise ValueError(f"未知算法 {unknown} (可选 {', '.join(ALGORITHMS)})")
        return value

    @field_validator("K")
    @classmethod
    def _arm_counts(cls, value):
        if not value or min(value) < 2:
            raise ValueError("K 必须非空且每个值 ≥ 2")
        return value

    @field_validator("epsilon")
    @classmethod
    def _budgets(cls, value):
        if not value or any(not (e > 0 and math.isfinite(e)) for e in value):
            raise ValueError("epsilon 必须非空且每个值为有限正数")
        return value

    @model_validator(mode="after")
    def _horizon_covers_arms(self):
        if self.T < max(self.K):
            raise ValueError(f"T={self.T} 小于最大的 K={max(self.K)}")
        return self

    def beta_for_run(self) -> float:
        return 1.0 / self.T if self.beta is None else self.beta


def build_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigError(validation_message(exc)) from exc


def validation_message(exc: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
    )


def resolve_config_path(name: str | Path) -> Path:
    """--config 可以是文件路径，也可以是内置预设名 (如 full_scale)"""
    path = ensure_path(name)
    if path.exists():
        return path
    # 只有裸名字 (无目录、无后缀) 才查找内置预设
    if path.name == str(name) and not path.suffix:
        preset = get_resource_path(f"presets/{path.name}.yaml")
        if preset.is_file():
            return Path(str(preset))
    raise ConfigError(f"配置文件不存在: {name}")


def load_section(section: str, path: str | Path | None = None, **cli) -> dict:
    """
    读取某一节配置：内置默认值 < --config 文件 < 命令行参数

    Args:
        section (str): "bandit" | "stopping_rule" | "logging"
        path: 用户配置文件或预设名
        **cli: 命令行参数，None 不覆盖

    Returns:
        dict: 合并后的配置
    """
    main_conf = load_yaml(get_resource_path("config.yaml")).get(section, {})
    custom_conf = {}
    if path:
        custom = load_yaml(resolve_config_path(path))
        # 分节文件取对应一节，扁平文件整体视为该节
        if any(k in custom for k in CONFIG_SECTIONS):
            custom_conf = custom.get(section) or {}
        else:
            custom_conf = custom
    return merge_config(main_conf, custom_conf, **cli)


def load_config(path: str | Path | None = None, **cli) -> ExperimentConfig:
    return build_config(load_section("bandit", path, **cli))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridTask:
    index: int
    setting: str
    algorithm: str
    K: int
    epsilon: float
    run: int
    seed: int

    @property
    def cell(self) -> tuple:
        return (self.setting, self.algorithm, self.K, self.epsilon)

    @property
    def trace_name(self) -> str:
        # repr 对不同的 float 给出不同的文本
        return f"{self.setting}_K{self.K}_eps{self.epsilon!r}_{self.algorithm}_run{self.run:03d}.csv"


def task_seed(base_seed: int, setting: str, K: int, epsilon: float, run: int) -> int:
    """
    种子只由单元格身份与运行序号决定 (不含算法名)，
    因此同一单元格里的不同算法共用同一奖励带，且结果与执行顺序无关。
    """
    return (base_seed ^ stable_hash64(setting, int(K), float(epsilon), int(run))) & SEED_MASK


def iter_tasks(cfg: ExperimentConfig) -> Iterator[GridTask]:
    index = 0
    for setting in cfg.settings:
        for K in cfg.K:
            for eps in cfg.epsilon:
                for algorithm in cfg.algorithms:
                    for run in range(cfg.runs):
                        yield GridTask(
                            index=index, setting=setting, algorithm=algorithm, K=K,
                            epsilon=float(eps), run=run,
                            seed=task_seed(cfg.base_seed, setting, K, eps, run),
                        )
                        index += 1


def run_task(cfg: ExperimentConfig, task: GridTask) -> RunTrace:
    env = make_environment(task.setting, task.K, deterministic=cfg.deterministic)
    source = ZeroNoiseSource if cfg.zero_noise else NoiseSource
    label = f"{'/'.join(str(c) for c in task.cell)} run {task.run}"
    with task_context(label):
        trace = run_algorithm(
            task.algorithm,
            env,
            cfg.T,
            source(task.seed),
            epsilon=task.epsilon,
            beta=cfg.beta_for_run(),
            checkpoints=cfg.checkpoints,
            ucb_inflation=cfg.ucb_inflation,
        )
        logger.debug(f"final regret {trace.final_regret:.1f}, seed {task.seed}")
    return trace


def trace_rows(task: GridTask, trace: RunTrace, T: int) -> list[TraceRow]:
    return [
        TraceRow(
            setting=task.setting, algorithm=task.algorithm, K=task.K, epsilon=task.epsilon,
            T=T, seed=task.seed, t=t, cum_regret=regret,
        )
        for t, regret in trace.checkpoints
    ]


def summarise_cell(cfg: ExperimentConfig, tasks: list[GridTask], traces: list[RunTrace]) -> CellSummary:
    """按运行序号汇总一个单元格；标准误 = 样本标准差 / sqrt(runs)"""
    first = tasks[0]
    env = make_environment(first.setting, first.K, deterministic=cfg.deterministic)
    times = [t for t, _ in traces[0].checkpoints]
    regrets = np.array([[r for _, r in tr.checkpoints] for tr in traces], dtype=np.float64)
    runs = len(traces)
    mean = regrets.mean(axis=0)
    stderr = regrets.std(axis=0, ddof=1) / math.sqrt(runs) if runs > 1 else np.zeros_like(mean)
    pulls = np.array([tr.pulls for tr in traces], dtype=np.float64)

    beta = cfg.beta_for_run()
    violations = 0
    if first.algorithm == "dp_se":
        envelope = [
            lemma_pull_bound(first.K, gap, beta, first.epsilon, cfg.T) if gap > 0 else math.inf
            for gap in env.gaps
        ]
        violations = sum(
            any(n > bound for n, bound in zip(tr.pulls, envelope)) for tr in traces
        )

    extra = {"beta": beta, "survivors": [tr.survivor for tr in traces]}
    if first.algorithm == "dp_ucb":
        extra["ucb_inflation"] = UCB_INFLATION_FORMULA if cfg.ucb_inflation else None

    return CellSummary(
        setting=first.setting,
        algorithm=first.algorithm,
        K=first.K,
        epsilon=first.epsilon,
        T=cfg.T,
        runs=runs,
        times=times,
        mean_regret=mean.tolist(),
        stderr_regret=stderr.tolist(),
        final_regrets=[tr.final_regret for tr in traces],
        seeds=[task.seed for task in tasks],
        mean_pulls=pulls.mean(axis=0).tolist(),
        optimal_eliminated_rate=sum(tr.optimal_eliminated(env.optimal) for tr in traces) / runs,
        pull_envelope_violations=violations,
        private=all(tr.private for tr in traces) and first.algorithm.startswith("dp_"),
        extra=extra,
    )


@dataclass
class GridResult:
    config: ExperimentConfig
    tasks: list[GridTask]
    traces: list[RunTrace]
    summaries: list[CellSummary]

    def metadata(self) -> dict:
        return {
            "private": not self.config.zero_noise,
            "prng": PRNG_NAME,
            "config": self.config.model_dump(mode="json"),
        }


def _guard_output(cfg: ExperimentConfig):
    summary = Path(cfg.out) / "summary.json"
    if not cfg.zero_noise or not summary.exists():
        return
    metadata, _ = load_summary_json(summary)
    if metadata.get("private", False):
        raise OutputError("拒绝用 zero-noise 调试结果覆盖私有输出", path=str(summary))


def _init_worker(level: int):
    """子进程只有控制台日志，级别跟随主进程"""
    log_setup(level=level)


async def run_grid(cfg: ExperimentConfig, write: bool = True) -> GridResult:
    """
    执行整个网格。每个 (单元格, 种子) 是一个进程池任务，结果按任务序号合并，
    所以输出与工作进程数无关。

    Args:
        cfg (ExperimentConfig): 已验证的配置
        write (bool): 是否写出 traces/*.csv、summary.csv、summary.json、resolved_config.yaml

    Returns:
        GridResult: 任务、轨迹与汇总
    """
    if write:
        _guard_output(cfg)
    if cfg.zero_noise:
        logger.warning("zero-noise 调试模式：输出不具备隐私性")

    tasks = list(iter_tasks(cfg))
    logger.info(f"网格开始: {len(tasks)} 个任务, workers={cfg.threads}, T={cfg.T}")
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(
        max_workers=cfg.threads,
        mp_context=multiprocessing.get_context("spawn"),
        initializer=_init_worker,
        initargs=(logger.getEffectiveLevel(),),
    ) as pool:
        futures = [loop.run_in_executor(pool, run_task, cfg, task) for task in tasks]
        traces = list(await asyncio.gather(*futures))

    cells: dict[tuple, list[int]] = {}
    for task in tasks:
        cells.setdefault(task.cell, []).append(task.index)
    summaries = []
    for cell, indices in cells.items():
        summary = summarise_cell(cfg, [tasks[i] for i in indices], [traces[i] for i in indices])
        logger.info(
            f"cell {'/'.join(str(c) for c in cell)}: final mean regret "
            f"{summary.final_mean_regret:.1f} ± {summary.stderr_regret[-1]:.1f}"
        )
        summaries.append(summary)

    result = GridResult(config=cfg, tasks=tasks, traces=traces, summaries=summaries)
    if write:
        await write_outputs(result)
    logger.info(f"网格完成: {len(summaries)} 个单元格")
    return result


async def write_outputs(result: GridResult):
    cfg = result.config
    out = Path(cfg.out)
    metadata = result.metadata()
    await asyncio.gather(*(
        emit_trace_csv(trace_rows(task, trace, cfg.T), out / "traces" / task.trace_name)
        for task, trace in zip(result.tasks, result.traces)
    ))
    await write_text_atomic(out / "summary.csv", format_summary_csv(result.summaries))
    await write_text_atomic(out / "summary.json", format_summary_json(result.summaries, metadata))
    await write_text_atomic(
        out / "resolved_config.yaml",
        yaml.safe_dump(metadata, allow_unicode=True, sort_keys=False),
    )
    logger.info(f"输出已写入 {out}")


# ---------------------------------------------------------------------------
# 比较 (ratio report)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RatioReport:
    setting: str
    K: int
    epsilon: float
    T: int
    algo_a: str
    algo_b: str
    runs: int
    ratio: float
    low: float
    high: float


def regret_ratio(a: float, b: float) -> float:
    """b/a，0/0 定义为 1，x/0 为 inf"""
    if a == 0:
        return 1.0 if b == 0 else math.inf
    return b / a


def compare(
    summaries: list[CellSummary],
    algo_a: str,
    algo_b: str,
    resamples: int = 2000,
    level: float = 0.9,
    seed: int = 0,
) -> list[RatioReport]:
    """
    每个单元格的最终遗憾比 algo_b / algo_a，以及按种子配对的 bootstrap 区间

    Raises:
        CompareError: 两个算法出现的单元格不一致，或种子不配对
    """
    by_cell: dict[tuple, dict[str, CellSummary]] = {}
    for s in summaries:
        by_cell.setdefault(s.key, {})[s.algorithm] = s

    present = [key for key, algos in by_cell.items() if algo_a in algos or algo_b in algos]
    if not present:
        raise CompareError(f"汇总中没有 {algo_a} 或 {algo_b}")

    rng = np.random.Generator(np.random.PCG64(seed))
    tail = (1 - level) / 2
    reports = []
    for key in present:
        algos = by_cell[key]
        if algo_a not in algos or algo_b not in algos:
            raise CompareError(f"单元格 {key} 缺少 {algo_a if algo_a not in algos else algo_b}")
        a, b = algos[algo_a], algos[algo_b]
        if a.seeds != b.seeds:
            raise CompareError(f"单元格 {key} 的两个算法种子不配对")
        ra = np.asarray(a.final_regrets, dtype=np.float64)
        rb = np.asarray(b.final_regrets, dtype=np.float64)
        idx = rng.integers(0, len(ra), size=(resamples, len(ra)))
        ma, mb = ra[idx].mean(axis=1), rb[idx].mean(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(ma == 0, np.where(mb == 0, 1.0, np.inf), mb / ma)
        reports.append(RatioReport(
            setting=a.setting, K=a.K, epsilon=a.epsilon, T=a.T,
            algo_a=algo_a, algo_b=algo_b, runs=a.runs,
            ratio=regret_ratio(float(ra.mean()), float(rb.mean())),
            low=float(np.quantile(ratios, tail, method="lower")),
            high=float(np.quantile(ratios, 1 - tail, method="higher")),
        ))
    return reports
