"""
命令行入口
chaos-tool <子命令> <config.json> [--seed S] [--replicates R] [--out-dir D] [--threads T]
退出码: 0 全部通过，1 有检查失败，2 配置错误或前置条件不满足
"""

import argparse
import logging
import sys

from check_nodes import CHECK_CLASS_MAPPINGS
from errors import ConfigError
from experiment_config import apply_overrides, load_config
from harness import DEFAULT_BLOCK_SIZE, RunOptions, run_experiment

logger = logging.getLogger(__name__)

SUBCOMMAND_HELP = {
    "validate": "校验三角阵列调度",
    "moments": "交叉矩 E[I_{k1}(f) I_{k2}(g)] 的蒙特卡洛检查",
    "mean": "多重经验积分精确均值检查",
    "diagram-check": "乘积公式逐次实现检查",
    "flimits": "F_l^{(n)} 确定性扫描",
    "converge": "截断混沌向极限混沌的 KS 收敛检查",
    "gaussianity": "W_n(B) 偏度/峰度检查",
    "all": "按配置顺序执行全部检查",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="实验配置 JSON 文件")
    common.add_argument("--seed", type=int, default=None, help="覆盖 master_seed")
    common.add_argument("--replicates", type=int, default=None, help="覆盖默认副本数")
    common.add_argument("--out-dir", default=None, help="覆盖输出目录")
    common.add_argument("--threads", type=int, default=1, help="工作进程数 (≤ 1 为进程内执行)")
    common.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE, help="副本分块大小")
    common.add_argument("--progress", action="store_true", help="显示进度条 (-v 时默认开启)")
    common.add_argument("--dump-counts", action="store_true", help="写出每个副本的单元计数")
    common.add_argument("--dump-gaussians", action="store_true", help="写出每个副本的高斯单元值")
    common.add_argument("-v", "--verbose", action="count", default=0, help="提高日志级别")

    parser = argparse.ArgumentParser(
        prog="chaos-tool", description="经验 Wiener 混沌的模拟与验证工具"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in list(CHECK_CLASS_MAPPINGS) + ["all"]:
        subparsers.add_parser(name, parents=[common], help=SUBCOMMAND_HELP.get(name))
    return parser


def _configure_logging(verbosity):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    try:
        config = load_config(args.config)
        config = apply_overrides(config, args.seed, args.replicates, args.out_dir)
    except ConfigError as e:
        print(f"❌ 配置错误: {e.describe()}", file=sys.stderr)
        return 2

    only_type = None if args.command == "all" else args.command
    if only_type is not None and not any(c.type == only_type for c in config.checks):
        print(f"⚠️ 配置中没有类型为 {only_type} 的检查", file=sys.stderr)
        return 2

    options = RunOptions(
        threads=args.threads,
        block_size=args.block_size,
        progress=args.progress or args.verbose > 0,
        dump_counts=args.dump_counts,
        dump_gaussians=args.dump_gaussians,
    )
    code, summary = run_experiment(config, options, only_type)

    for check_id, entry in summary.items():
        if check_id.startswith("_"):
            continue
        print(entry["detail"])
    if "_preconditions" in summary and not summary["_preconditions"]["pass"]:
        print(summary["_preconditions"]["detail"], file=sys.stderr)
    status = {0: "✅ 全部检查通过", 1: "❌ 有检查未通过", 2: "❌ 前置条件不满足"}[code]
    print(f"{status} (结果目录: {config.output_dir})")
    return code


if __name__ == "__main__":
    sys.exit(main())
