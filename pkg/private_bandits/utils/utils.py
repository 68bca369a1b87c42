import hashlib
from pathlib import Path
from typing import Any

import importlib_resources
import yaml

from .exceptions import ConfigError


def get_resource_path(filepath: str):
    """获取包内资源文件的路径 (Get the path of a packaged resource file)

    Args:
        filepath (str): 相对于 private_bandits 包的路径
    """

    return importlib_resources.files("private_bandits") / filepath


def ensure_path(path: str | Path) -> Path:
    """确保路径是一个Path对象 (Ensure the path is a Path object)"""
    return Path(path) if isinstance(path, str) else path


def load_yaml(path) -> dict:
    """
    读取 YAML 配置文件 (Read a YAML config file)

    Args:
        path: 文件路径或 importlib_resources 的 Traversable

    Returns:
        dict: 解析后的配置，空文件返回 {}
    """
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"配置文件不存在: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"配置文件不是合法的 YAML: {path} ({exc})") from exc

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是键值映射: {path}")
    return data


def merge_config(
        main_conf: dict = ...,
        custom_conf: dict = ...,
        **kwargs,
):
    """
    合并配置参数，使 CLI 参数优先级高于自定义配置，自定义配置优先级高于主配置。

    Args:
        main_conf (dict): 主配置参数字典 (packaged defaults)
        custom_conf (dict): 自定义配置参数字典 (--config file)
        **kwargs: CLI 参数

    Returns:
        dict: 合并后的配置参数字典
    """
    merged_conf = dict(main_conf)
    for key, value in custom_conf.items():
        if value is not None and value != "":  # 只有值不为 None 和 空值，才进行合并
            merged_conf[key] = value

    # CLI 参数优先级最高
    for key, value in kwargs.items():
        if key not in merged_conf:
            merged_conf[key] = value
        elif value is not None and value != "":
            merged_conf[key] = value

    return merged_conf


def split_csv_arg(value: str | list | None, cast=str) -> list | None:
    """把 "0.25,0.5" 这样的命令行参数拆成列表，None 原样返回"""
    if value is None:
        return None
    if isinstance(value, list):
        return [cast(v) for v in value]
    try:
        return [cast(part.strip()) for part in str(value).split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"无法解析列表参数: {value!r}") from exc


def stable_hash64(*parts: Any) -> int:
    """与进程无关的 64 位哈希 (blake2b)，用于派生随机种子"""
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")
