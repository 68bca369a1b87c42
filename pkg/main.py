"""
命令行入口 (command-line entry point)

    python main.py stopping-rule run --rule dp_exp_nas --mu 0.4 --eps 1 --runs 20
    python main.py bandit run --setting c2 --algo dp_se --k 5 --eps 0.25 --horizon 100000
    python main.py bandit grid --config vary_eps --threads 8
    python main.py bandit compare --summary results --algo-a dp_se --algo-b dp_ucb
    python main.py selftest

退出码: 0 成功，2 配置错误，3 运行时错误。
"""

import argparse
import asyncio
import logging
import sys

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from private_bandits.core_noise import NoiseSource
from private_bandits.emitters import CellSummary, load_summary_json
from private_bandits.harness import (
    ExperimentConfig,
    compare,
    load_config,
    load_section,
    run_grid,
    validation_message,
)
from private_bandits.selftest import run_selftest
from private_bandits.stopping_rules import (
    StoppingRuleConfig,
    expected_halt_bound,
    run_stopping_rule_batch,
    signed_bernoulli_stream,
    summarise_halting,
)
from private_bandits.utils.exceptions import ConfigError, SimulationError
from private_bandits.utils.logger import log_setup
from private_bandits.utils.utils import split_csv_arg

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

console = Console()


def _add_bandit_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="配置文件路径或内置预设名 (full_scale / vary_eps / vary_k)")
    parser.add_argument("--setting", help="c1 | c2 | c3 | c4，可用逗号分隔多个")
    parser.add_argument("--algo", help="dp_se | dp_ucb | se | ucb，可用逗号分隔多个")
    parser.add_argument("--k", help="臂数量，可用逗号分隔多个")
    parser.add_argument("--eps", help="隐私预算，可用逗号分隔多个")
    parser.add_argument("--horizon", type=int, help="时间上限 T")
    parser.add_argument("--runs", type=int, help="每个单元格的种子数")
    parser.add_argument("--seed", type=int, help="基础种子")
    parser.add_argument("--beta", type=float, help="失败概率，默认 1/T")
    parser.add_argument("--checkpoints", type=int, help="记录的检查点数量")
    parser.add_argument("--out", help="输出目录")
    parser.add_argument("--threads", type=int, help="工作进程数，不影响结果")
    parser.add_argument("--zero-noise", action="store_true", default=None, help="仅调试：关闭所有 Laplace 噪声")
    parser.add_argument("--deterministic", action="store_true", default=None, help="拉动直接返回臂的均值")
    parser.add_argument(
        "--no-ucb-inflation", dest="ucb_inflation", action="store_false", default=None,
        help="去掉 DP-UCB 指标中的 γ 项",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="private_bandits", description="私有停止规则与私有老虎机实验")
    parser.add_argument("--log-dir", help="同时把日志写入该目录")
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG 级别日志")
    commands = parser.add_subparsers(dest="command", required=True)

    stopping = commands.add_parser("stopping-rule", help="停止规则实验")
    stopping_commands = stopping.add_subparsers(dest="action", required=True)
    sr_run = stopping_commands.add_parser("run", help="运行一个停止规则若干次")
    sr_run.add_argument("--config", help="配置文件路径")
    sr_run.add_argument("--rule", choices=["nas", "dp_nas", "dp_exp_nas"])
    sr_run.add_argument("--mu", type=float, help="样本流均值，样本取值 ±R")
    sr_run.add_argument("--R", type=float, dest="R", help="样本范围 [-R, R]")
    sr_run.add_argument("--alpha", type=float)
    sr_run.add_argument("--beta", type=float)
    sr_run.add_argument("--eps", type=float, dest="epsilon")
    sr_run.add_argument("--runs", type=int)
    sr_run.add_argument("--seed", type=int, dest="base_seed")
    sr_run.add_argument("--max-samples", type=int, dest="max_samples")
    sr_run.add_argument("--zero-noise", action="store_true", default=None)
    sr_run.set_defaults(handler=cmd_stopping_rule_run)

    bandit = commands.add_parser("bandit", help="老虎机实验")
    bandit_commands = bandit.add_subparsers(dest="action", required=True)
    b_run = bandit_commands.add_parser("run", help="运行单个单元格")
    _add_bandit_flags(b_run)
    b_run.set_defaults(handler=cmd_bandit_run)
    b_grid = bandit_commands.add_parser("grid", help="运行配置中的整个网格")
    _add_bandit_flags(b_grid)
    b_grid.set_defaults(handler=cmd_bandit_grid)
    b_compare = bandit_commands.add_parser("compare", help="比较两个算法的最终遗憾")
    b_compare.add_argument("--summary", nargs="+", required=True, help="summary.json 或其所在目录")
    b_compare.add_argument("--algo-a", default="dp_se")
    b_compare.add_argument("--algo-b", default="dp_ucb")
    b_compare.set_defaults(handler=cmd_bandit_compare)

    selftest = commands.add_parser("selftest", help="机制层不变量自检")
    selftest.set_defaults(handler=cmd_selftest)
    return parser


def _bandit_config(args) -> ExperimentConfig:
    return load_config(
        args.config,
        settings=split_csv_arg(args.setting),
        algorithms=split_csv_arg(args.algo),
        K=split_csv_arg(args.k, int),
        epsilon=split_csv_arg(args.eps, float),
        T=args.horizon,
        runs=args.runs,
        base_seed=args.seed,
        beta=args.beta,
        checkpoints=args.checkpoints,
        out=args.out,
        threads=args.threads,
        zero_noise=args.zero_noise,
        deterministic=args.deterministic,
        ucb_inflation=args.ucb_inflation,
    )


def _summary_table(summaries: list[CellSummary]) -> Table:
    table = Table(title="单元格汇总")
    for column in ("setting", "algorithm", "K", "ε", "T", "runs", "final regret", "stderr", "opt. eliminated"):
        table.add_column(column)
    for s in summaries:
        table.add_row(
            s.setting, s.algorithm, str(s.K), f"{s.epsilon:g}", str(s.T), str(s.runs),
            f"{s.final_mean_regret:.2f}", f"{s.stderr_regret[-1]:.2f}", f"{s.optimal_eliminated_rate:.2f}",
        )
    return table


def cmd_bandit_grid(args) -> int:
    return _run_and_print(_bandit_config(args))


def cmd_bandit_run(args) -> int:
    cfg = _bandit_config(args)
    multi = [name for name in ("settings", "algorithms", "K", "epsilon") if len(getattr(cfg, name)) != 1]
    if multi:
        raise ConfigError(f"bandit run 只运行一个单元格，以下参数给了多个值: {', '.join(multi)}")
    return _run_and_print(cfg)


def _run_and_print(cfg: ExperimentConfig) -> int:
    result = asyncio.run(run_grid(cfg))
    console.print(_summary_table(result.summaries))
    return EXIT_OK


def cmd_bandit_compare(args) -> int:
    summaries = []
    for path in args.summary:
        _, cells = load_summary_json(path)
        summaries.extend(cells)
    reports = compare(summaries, args.algo_a, args.algo_b)
    table = Table(title=f"final regret ratio {args.algo_b} / {args.algo_a}")
    for column in ("setting", "K", "ε", "T", "runs", "ratio", "90% interval"):
        table.add_column(column)
    for r in reports:
        table.add_row(
            r.setting, str(r.K), f"{r.epsilon:g}", str(r.T), str(r.runs),
            f"{r.ratio:.3f}", f"[{r.low:.3f}, {r.high:.3f}]",
        )
    console.print(table)
    return EXIT_OK


def cmd_stopping_rule_run(args) -> int:
    conf = load_section(
        "stopping_rule",
        args.config,
        rule=args.rule, mu=args.mu, R=args.R, alpha=args.alpha, beta=args.beta,
        epsilon=args.epsilon, runs=args.runs, base_seed=args.base_seed,
        max_samples=args.max_samples, zero_noise=args.zero_noise,
    )
    rule, mu, runs = conf.pop("rule"), float(conf.pop("mu")), int(conf.pop("runs"))
    base_seed, zero_noise = int(conf.pop("base_seed")), bool(conf.pop("zero_noise"))
    if rule == "nas":
        conf["epsilon"] = None
    try:
        cfg = StoppingRuleConfig(**conf)
    except ValidationError as exc:
        raise ConfigError(validation_message(exc)) from exc
    if abs(mu) > cfg.R:
        raise ConfigError(f"|mu| 不能超过 R: mu={mu}, R={cfg.R}")

    p = (1 + mu / cfg.R) / 2

    def stream_factory(source: NoiseSource):
        return (cfg.R * x for x in signed_bernoulli_stream(p, source))

    outcomes = run_stopping_rule_batch(rule, cfg, stream_factory, runs, base_seed, zero_noise)

    table = Table(title=f"{rule} (μ={mu}, α={cfg.alpha}, β={cfg.beta}, ε={cfg.epsilon})")
    for column in ("run", "halt time", "estimate", "capped"):
        table.add_column(column)
    for i, o in enumerate(outcomes):
        estimate = "-" if o.estimate is None else f"{o.estimate:.5f}"
        table.add_row(str(i), str(o.halt_time), estimate, "yes" if o.capped else "")
    console.print(table)

    summary = summarise_halting(outcomes, mu, cfg)
    console.print(
        f"mean halt {summary.mean_halt:.1f}, median {summary.median_halt:.1f}, "
        f"failure rate {summary.failure_rate:.3f}, capped {summary.capped}"
    )
    if summary.within_bound_rate is not None:
        console.print(
            f"halt bound {expected_halt_bound(cfg, mu)}, within bound {summary.within_bound_rate:.3f}"
        )
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest()
    table = Table(title="selftest")
    for column in ("check", "result", "detail"):
        table.add_column(column)
    for r in results:
        table.add_row(r.name, "[green]pass[/green]" if r.passed else "[red]FAIL[/red]", r.detail)
    console.print(table)
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        logging_conf = load_section("logging")
        level = logging.DEBUG if args.verbose else getattr(logging, str(logging_conf.get("level", "INFO")).upper())
        logger = log_setup(log_to_console=True, log_path=args.log_dir or logging_conf.get("log_dir"), level=level)
    except ConfigError as exc:
        console.print(exc.display_error())
        return EXIT_CONFIG

    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.error(exc.display_error())
        return EXIT_CONFIG
    except SimulationError as exc:
        logger.error(exc.display_error())
        return EXIT_RUNTIME
    except OSError as exc:
        logger.error(f"I/O 错误: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
