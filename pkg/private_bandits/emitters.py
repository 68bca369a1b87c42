"""
CSV / JSON 输出：轨迹 CSV、汇总 CSV、汇总 JSON，全部原子写入。

CSV 约定: UTF-8，LF 换行，总是带表头，小数保留 10 位有效数字。
"""

import asyncio
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import aiofiles
import aiofiles.os
import pandas as pd

from .utils.exceptions import OutputError
from .utils.logger import logger
from .utils.utils import ensure_path

TRACE_COLUMNS = ["setting", "algorithm", "K", "epsilon", "T", "seed", "t", "cum_regret"]
SUMMARY_COLUMNS = [
    "setting", "algorithm", "K", "epsilon", "T", "runs", "t", "mean_regret", "stderr_regret",
]
FLOAT_FORMAT = "%.10g"

_TRACE_DTYPES = {
    "setting": str, "algorithm": str, "K": "int64", "epsilon": "float64",
    "T": "int64", "seed": "int64", "t": "int64", "cum_regret": "float64",
}
_SUMMARY_DTYPES = {
    "setting": str, "algorithm": str, "K": "int64", "epsilon": "float64", "T": "int64",
    "runs": "int64", "t": "int64", "mean_regret": "float64", "stderr_regret": "float64",
}


@dataclass(frozen=True)
class TraceRow:
    setting: str
    algorithm: str
    K: int
    epsilon: float
    T: int
    seed: int
    t: int
    cum_regret: float


@dataclass
class CellSummary:
    """一个 (setting, algorithm, K, ε) 单元格在所有种子上的汇总"""

    setting: str
    algorithm: str
    K: int
    epsilon: float
    T: int
    runs: int
    times: list[int]
    mean_regret: list[float]
    stderr_regret: list[float]
    final_regrets: list[float]
    seeds: list[int]
    mean_pulls: list[float]
    optimal_eliminated_rate: float
    pull_envelope_violations: int = 0
    private: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.setting, self.K, self.epsilon, self.T)

    @property
    def final_mean_regret(self) -> float:
        return self.mean_regret[-1] if self.mean_regret else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CellSummary":
        return cls(**data)


def _to_csv(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue()


def format_trace_csv(rows: list[TraceRow]) -> str:
    frame = pd.DataFrame([asdict(r) for r in rows], columns=TRACE_COLUMNS)
    return _to_csv(frame.astype(_TRACE_DTYPES))


def format_summary_csv(summaries: list[CellSummary]) -> str:
    records = [
        {
            "setting": s.setting, "algorithm": s.algorithm, "K": s.K, "epsilon": s.epsilon,
            "T": s.T, "runs": s.runs, "t": t, "mean_regret": m, "stderr_regret": se,
        }
        for s in summaries
        for t, m, se in zip(s.times, s.mean_regret, s.stderr_regret)
    ]
    frame = pd.DataFrame(records, columns=SUMMARY_COLUMNS)
    return _to_csv(frame.astype(_SUMMARY_DTYPES))


async def write_text_atomic(path: str | Path, text: str):
    """
    先写临时文件再改名，读者看到的要么是旧文件要么是完整的新文件。

    Raises:
        OutputError: 目录不可写或改名失败
    """
    path = ensure_path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        await aiofiles.os.makedirs(path.parent, exist_ok=True)
        async with aiofiles.open(tmp, "w", encoding="utf-8", newline="") as f:
            await f.write(text)
        await aiofiles.os.replace(tmp, path)
    except OSError as exc:
        logger.error(f"写入 {path} 失败: {exc}")
        raise OutputError(f"无法写入文件 ({exc.strerror or exc})", path=str(path)) from exc


async def emit_csv_async(data: list, path: str | Path):
    """按元素类型选择轨迹或汇总格式；空列表写出只有表头的汇总文件"""
    if data and isinstance(data[0], TraceRow):
        text = format_trace_csv(data)
    else:
        text = format_summary_csv(data)
    await write_text_atomic(path, text)


def emit_csv(data: list, path: str | Path):
    """emit_csv_async 的同步入口，不能在运行中的事件循环里调用"""
    asyncio.run(emit_csv_async(data, path))


async def emit_trace_csv(rows: list[TraceRow], path: str | Path):
    await write_text_atomic(path, format_trace_csv(rows))


def _read_csv(path: str | Path, columns: list[str], dtypes: dict) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise OutputError(f"无法读取 CSV ({exc})", path=str(path)) from exc
    if list(frame.columns) != columns:
        raise OutputError(f"CSV 表头不符: {list(frame.columns)}", path=str(path))
    return frame.astype(dtypes)


def parse_trace_csv(path: str | Path) -> list[TraceRow]:
    frame = _read_csv(path, TRACE_COLUMNS, _TRACE_DTYPES)
    return [
        TraceRow(
            setting=r.setting, algorithm=r.algorithm, K=int(r.K), epsilon=float(r.epsilon),
            T=int(r.T), seed=int(r.seed), t=int(r.t), cum_regret=float(r.cum_regret),
        )
        for r in frame.itertuples(index=False)
    ]


def parse_summary_csv(path: str | Path) -> pd.DataFrame:
    return _read_csv(path, SUMMARY_COLUMNS, _SUMMARY_DTYPES)


def format_summary_json(summaries: list[CellSummary], metadata: dict) -> str:
    payload = {**metadata, "cells": [s.to_dict() for s in summaries]}
    return json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=True) + "\n"


def load_summary_json(path: str | Path) -> tuple[dict, list[CellSummary]]:
    """读取 summary.json，返回 (元数据, 单元格汇总)"""
    path = ensure_path(path)
    if path.is_dir():
        path = path / "summary.json"
    try:
        with path.open("r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as exc:
        raise OutputError(f"无法读取汇总 ({exc.strerror or exc})", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise OutputError(f"汇总不是合法 JSON ({exc})", path=str(path)) from exc
    cells = [CellSummary.from_dict(c) for c in payload.pop("cells", [])]
    return payload, cells
