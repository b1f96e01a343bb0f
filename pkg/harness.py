"""
实验流程模块
交叉矩、精确均值、图公式恒等式、F 双线性型扫描、弱收敛 KS 检验与高斯性检验，
以及 CSV / summary.json 的持久化与整次实验的执行
"""

import csv
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from diagrams import diagram_expansion, exact_cross_moment, exact_mean, f_bilinear
from empirical import draw_counts_batch, empirical_integral, k_schedule, truncated_chaos, w_n
from errors import ChaosToolError, DomainError
from integrands import Grid, common_grid, l2_inner, support_within_window, symmetrize
from mc_stats import estimate_mean, ks_two_sample, shape_statistics
from measure_model import TriangularArraySchedule, normalize_cells, validate_schedule
from replicates import DEFAULT_BLOCK_SIZE, MASK64, replicate_rngs, run_replicates, splitmix64
from wiener import chaos_series, sample_gaussian_cells_batch

logger = logging.getLogger(__name__)

TOOLKIT_VERSION = "1.0.0"

DIAGRAM_ORDER_LIMIT = 4
DIAGRAM_TOLERANCE = 1e-9
MEAN_ORDER_LIMIT = 20
GAUSSIANITY_MIN_REPLICATES = 1000
GAUSSIANITY_ASYMPTOTIC_N = 10**4
# 双样本 KS 在 5% 水平下的临界系数
KS_CRITICAL = 1.36


@dataclass
class RunOptions:
    """执行选项: 进程数、分块大小、进度条与调试转储"""

    threads: int = 1
    block_size: int = DEFAULT_BLOCK_SIZE
    progress: bool = False
    dump_counts: bool = False
    dump_gaussians: bool = False


def derive_seed(master_seed, label, n=0):
    """为每个 (检查, n) 派生独立的主种子"""
    mixed = int(master_seed) ^ zlib.crc32(label.encode("utf-8")) ^ (int(n) << 32)
    return splitmix64(mixed & MASK64)


# ---------------------------------------------------------------------------
# 副本 worker (模块级函数，可被进程池序列化)
# ---------------------------------------------------------------------------


def _product_worker(task):
    (schedule, grid, n, integrands), master_seed, start, stop = task
    counts = draw_counts_batch(
        n, grid, replicate_rngs(master_seed, start, stop), schedule, (master_seed, start, stop)
    )
    values = np.ones(stop - start)
    for f in integrands:
        values = values * empirical_integral(f, counts)
    return values


def _diagram_worker(task):
    (schedule, grid, n, f, g, terms), master_seed, start, stop = task
    counts = draw_counts_batch(n, grid, replicate_rngs(master_seed, start, stop), schedule)
    lhs = empirical_integral(f, counts) * empirical_integral(g, counts)
    term_values = [empirical_integral(term.contraction, counts) for term in terms]
    rhs = np.zeros(stop - start)
    for term, values in zip(terms, term_values):
        rhs = rhs + term.coefficient * term.count * values
    return np.column_stack([lhs, rhs] + term_values)


def _w_n_worker(task):
    (schedule, grid, n, cells), master_seed, start, stop = task
    counts = draw_counts_batch(n, grid, replicate_rngs(master_seed, start, stop), schedule)
    return np.asarray(w_n(counts, cells), dtype=np.float64).reshape(stop - start)


def _truncated_chaos_worker(task):
    (schedule, grid, n, h, K), master_seed, start, stop = task
    counts = draw_counts_batch(n, grid, replicate_rngs(master_seed, start, stop), schedule)
    return np.asarray(truncated_chaos(h, K, counts), dtype=np.float64).reshape(stop - start)


def _chaos_series_worker(task):
    (control, grid, h, K), master_seed, start, stop = task
    realization = sample_gaussian_cells_batch(
        grid, replicate_rngs(master_seed, start, stop, "gaussian"), control
    )
    return np.asarray(chaos_series(h, K, realization), dtype=np.float64).reshape(stop - start)


def _run(worker, payload, replicates, master_seed, options, desc):
    options = options or RunOptions()
    return run_replicates(
        worker,
        payload,
        replicates,
        master_seed,
        threads=options.threads,
        block_size=options.block_size,
        progress=options.progress,
        desc=desc,
    )


# ---------------------------------------------------------------------------
# 检查操作
# ---------------------------------------------------------------------------


def cross_moment_limit(f, g, schedule=None):
    """E[I_{k1}(f)I_{k2}(g)] 的极限: k1 ≠ k2 时为 0，否则 k!⟨f̃, g̃⟩_{L²(μ^k)}"""
    if f.order != g.order:
        return 0.0
    return math.factorial(f.order) * l2_inner(symmetrize(f), symmetrize(g), "mu", schedule)


def estimate_cross_moment(f, g, n, replicates, seed, schedule=None, options=None):
    """I_{k1}^{(n)}(f)·I_{k2}^{(n)}(g) 的蒙特卡洛均值，target 为极限值，exact 为有限 n 精确值"""
    if replicates < 2:
        raise DomainError(f"至少需要 2 个副本，得到 {replicates}")
    schedule = schedule or TriangularArraySchedule.default()
    grid = common_grid(f.grid, g.grid)
    samples = _run(
        _product_worker, (schedule, grid, n, (f, g)), replicates, seed, options, f"moments n={n}"
    )
    return estimate_mean(
        samples, cross_moment_limit(f, g, schedule), exact_cross_moment(f, g, n, schedule)
    )


def check_mean_formula(f, k, n, replicates, seed, schedule=None, options=None):
    """I_k^{(n)}(f) 的蒙特卡洛均值对比 k!·B_{n,k}·(n/a_n)^{k/2}·P_n^k(f)"""
    if k > MEAN_ORDER_LIMIT:
        raise DomainError(f"k = {k} 超过上限 {MEAN_ORDER_LIMIT}")
    schedule = schedule or TriangularArraySchedule.default()
    target = exact_mean(f, k, n, schedule)
    samples = _run(_product_worker, (schedule, f.grid, n, (f,)), replicates, seed, options, f"mean n={n}")
    return estimate_mean(samples, target)


@dataclass
class DiagramIdentityResult:
    """逐次实现的乘积公式误差，term_values 为第 0 个副本上各项的经验积分值"""

    max_relative_error: float
    terms: list
    term_values: list
    replicates: int

    def passed(self, tolerance=DIAGRAM_TOLERANCE):
        return self.max_relative_error <= tolerance


def check_diagram_identity(f, g, n, replicates, seed, schedule=None, options=None):
    """每次实现上比较 I(f)I(g) 与乘积公式右端，返回 max |LHS−RHS|/(1+|LHS|)"""
    if max(f.order, g.order) > DIAGRAM_ORDER_LIMIT:
        raise DomainError(f"阶数 ({f.order}, {g.order}) 超过图公式检查上限 {DIAGRAM_ORDER_LIMIT}")
    schedule = schedule or TriangularArraySchedule.default()
    terms = diagram_expansion(f, g, n, schedule)
    grid = common_grid(f.grid, g.grid)
    table = _run(
        _diagram_worker, (schedule, grid, n, f, g, tuple(terms)), replicates, seed, options,
        f"diagram n={n}",
    )
    lhs, rhs = table[:, 0], table[:, 1]
    errors = np.abs(lhs - rhs) / (1.0 + np.abs(lhs))
    return DiagramIdentityResult(float(errors.max()), terms, list(table[0, 2:]), replicates)


@dataclass
class FLimitRow:
    l: int
    n: int
    value: float
    limit: float


@dataclass
class FLimitSweep:
    rows: list = field(default_factory=list)
    trends: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.trends.values())


def f_limit(f, g, l, schedule=None):
    """F_l^{(n)} 的极限: l = k1 = k2 时为 ⟨f̃, g̃⟩，其余情形为 0"""
    if f.order == g.order == l:
        return l2_inner(symmetrize(f), symmetrize(g), "mu", schedule)
    return 0.0


def f_limit_sweep(f, g, l_values, n_grid, schedule=None):
    """确定性扫描 F_l^{(n)}(f, g)，并检查 |value − limit| 沿 n 不增"""
    schedule = schedule or TriangularArraySchedule.default()
    sweep = FLimitSweep()
    for l in l_values:
        limit = f_limit(f, g, l, schedule)
        gaps = []
        for n in n_grid:
            value = f_bilinear(f, g, l, n, schedule)
            sweep.rows.append(FLimitRow(l, n, value, limit))
            gaps.append(abs(value - limit))
        sweep.trends[l] = all(
            later <= earlier * (1 + 1e-12) + 1e-15 for earlier, later in zip(gaps, gaps[1:])
        )
    return sweep


@dataclass
class ConvergenceResult:
    reports: list
    trend_ok: bool
    final_p_value: float


def ks_convergence(h, n_grid, replicates, k_rule, seed, schedule=None, options=None):
    """
    每个 n 上抽取 R 个截断经验混沌 (K = K_n) 与 R 个极限混沌 (K = K_max)，做双样本 KS 检验
    两侧样本相互独立；KS 统计量允许相邻 n 之间有一个 5% 临界值以内的波动
    """
    schedule = schedule or TriangularArraySchedule.default()
    c, epsilon = k_rule
    grid = h.grid
    reports = []
    for n in n_grid:
        K = k_schedule(n, c, epsilon, schedule)
        master = derive_seed(seed, "converge", n)
        empirical = _run(
            _truncated_chaos_worker, (schedule, grid, n, h, K), replicates, master, options,
            f"converge n={n}",
        )
        limit = _run(
            _chaos_series_worker, (schedule.control, grid, h, h.k_max), replicates, master,
            options, f"limit n={n}",
        )
        reports.append(ks_two_sample(empirical, limit, n, K))
        logger.info("📊 %s", reports[-1].describe())

    slack = KS_CRITICAL * math.sqrt(2.0 / replicates)
    statistics = [r.statistic for r in reports]
    trend_ok = all(b <= a + slack for a, b in zip(statistics, statistics[1:]))
    if len(statistics) > 1:
        trend_ok = trend_ok and statistics[-1] <= statistics[0]
    return ConvergenceResult(reports, trend_ok, reports[-1].p_value if reports else 1.0)


@dataclass
class GaussianityResult:
    n: int
    shape: object
    note: str = ""
    p: float = 0.0

    @property
    def passed(self):
        return self.shape.passed()


def binomial_shape(n, p):
    """
    Bin(n, p) 的 (偏度, 超额峰度)
    W_n(B) 是 N_B ~ Bin(n, P_n(B)) 的正比例仿射变换，两者形状相同
    """
    if not 0.0 < p < 1.0:
        return 0.0, 0.0
    variance = n * p * (1.0 - p)
    return (1.0 - 2.0 * p) / math.sqrt(variance), (1.0 - 6.0 * p * (1.0 - p)) / variance


def gaussianity_check(cells, n, replicates, seed, schedule=None, options=None):
    """
    W_n(B) 的样本偏度与超额峰度，jackknife 标准误
    z 相对有限 n 的精确二项值，|z| ≤ 4 时通过；相对高斯极限 0 的 z 仅作参考
    """
    if replicates < GAUSSIANITY_MIN_REPLICATES:
        raise DomainError(f"高斯性检查至少需要 {GAUSSIANITY_MIN_REPLICATES} 个副本")
    schedule = schedule or TriangularArraySchedule.default()
    cells = normalize_cells(cells)
    grid = Grid(cells)
    p = schedule.p_n(cells, n)
    skewness_target, kurtosis_target = binomial_shape(n, p)
    samples = _run(_w_n_worker, (schedule, grid, n, cells), replicates, seed, options, f"gaussianity n={n}")
    shape = shape_statistics(samples, skewness_target, kurtosis_target)
    note = ""
    if shape.degenerate:
        note = "W_n(B) 恒为 0 (P_n(B) = 0 或 B 覆盖 E_n)"
    elif n < GAUSSIANITY_ASYMPTOTIC_N:
        note = "n 处于渐近区之前，相对高斯极限的偏离较大"
    return GaussianityResult(n, shape, note, p)


# ---------------------------------------------------------------------------
# 持久化
# ---------------------------------------------------------------------------


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.debug("💾 已写入 %s (%d 行)", path, len(rows))


def write_summary(path, summary):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True, ensure_ascii=False)
        handle.write("\n")


def dump_counts(path, n, grid, schedule, master_seed, replicates):
    """按种子重新生成计数并写出 (replicate, cell_index, count)，cell_index = t+1 为其余部分"""
    counts = draw_counts_batch(n, grid, replicate_rngs(master_seed, 0, replicates), schedule)
    rows = [
        (r, i + 1, int(value))
        for r, row in enumerate(counts.counts)
        for i, value in enumerate(row)
    ]
    write_csv(path, ("replicate", "cell_index", "count"), rows)


def dump_gaussians(path, grid, control, master_seed, replicates):
    """按种子重新生成高斯单元值并写出 (replicate, cell_index, value)"""
    realization = sample_gaussian_cells_batch(
        grid, replicate_rngs(master_seed, 0, replicates, "gaussian"), control
    )
    rows = [
        (r, i + 1, float(value))
        for r, row in enumerate(realization.values)
        for i, value in enumerate(row)
    ]
    write_csv(path, ("replicate", "cell_index", "value"), rows)


# ---------------------------------------------------------------------------
# 整次实验
# ---------------------------------------------------------------------------


@dataclass
class ExperimentContext:
    """检查节点共享的运行上下文"""

    config: object
    options: RunOptions = field(default_factory=RunOptions)

    @property
    def schedule(self):
        return self.config.schedule

    @property
    def output_dir(self):
        return Path(self.config.output_dir)

    def seed_for(self, check_id, n=0):
        return derive_seed(self.config.master_seed, check_id, n)


def check_preconditions(config):
    """调度在 n_grid 上通过校验，且所有混沌向量的支撑位于 E_{n0} 内"""
    lines = []
    report = validate_schedule(config.schedule, config.n_grid)
    ok = report.passed
    lines.append(report.format())
    for name, h in config.chaos.items():
        inside, detail = support_within_window(h, config.schedule, config.support_n0)
        ok = ok and inside
        lines.append(f"{'✅' if inside else '❌'} {name}: {detail}")
    return ok, "\n".join(lines)


def run_experiment(config, options=None, only_type=None):
    """
    执行配置中的检查 (only_type 给定时只执行该类型)，写出 results/<check>.csv 与 summary.json
    返回 (exit_code, summary)：全部通过为 0，有检查失败为 1，前置条件不满足为 2
    """
    from check_nodes import CHECK_CLASS_MAPPINGS, CHECK_DISPLAY_NAME_MAPPINGS

    options = options or RunOptions()
    context = ExperimentContext(config, options)
    results_dir = context.output_dir / "results"
    summary = {
        "_run": {
            "master_seed": config.master_seed,
            "replicates": config.replicates,
            "n_grid": list(config.n_grid),
            "schedule": config.schedule.to_config(),
            "versions": {
                "toolkit": TOOLKIT_VERSION,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
        }
    }

    checks = [c for c in config.checks if only_type is None or c.type == only_type]
    if only_type != "validate" and checks:
        ok, detail = check_preconditions(config)
        summary["_preconditions"] = {"pass": ok, "detail": detail}
        if not ok:
            logger.error("❌ 前置条件不满足，未执行任何检查\n%s", detail)
            write_summary(context.output_dir / "summary.json", summary)
            return 2, summary

    tables = {}
    all_passed = True
    for check in checks:
        node_class = CHECK_CLASS_MAPPINGS[check.type]
        node = node_class()
        title = CHECK_DISPLAY_NAME_MAPPINGS.get(check.type, check.type)
        logger.info("🔧 运行 %s [%s]", title, check.id)
        try:
            passed, rows, report = getattr(node, node.FUNCTION)(
                context, check.id, **{k: v for k, v in check.params.items() if v is not None}
            )
        except ChaosToolError as e:
            passed, rows, report = False, [], f"❌ {check.id} 失败: {e}"
        except Exception as e:
            logger.exception("❌ %s 执行异常", check.id)
            passed, rows, report = False, [], f"❌ {check.id} 执行异常: {type(e).__name__}: {e}"

        summary[check.id] = {"pass": bool(passed), "detail": report}
        all_passed = all_passed and passed
        table = tables.setdefault(node.OUTPUT_FILE, (node.CSV_HEADER, []))
        table[1].extend(rows)
        logger.info("%s %s", "✅" if passed else "❌", check.id)

    for file_name, (header, rows) in tables.items():
        write_csv(results_dir / file_name, header, rows)
    write_summary(context.output_dir / "summary.json", summary)
    return (0 if all_passed else 1), summary
