"""
检查节点模块
每种检查是一个节点类: INPUT_TYPES 声明参数，FUNCTION 指向执行方法，
执行方法返回 (是否通过, CSV 行, 报告文本)
"""

import itertools
import logging
import math

import numpy as np

from errors import ChaosToolError
from harness import (
    DIAGRAM_TOLERANCE,
    check_diagram_identity,
    check_mean_formula,
    derive_seed,
    dump_counts,
    dump_gaussians,
    estimate_cross_moment,
    f_limit_sweep,
    gaussianity_check,
    ks_convergence,
)
from integrands import Grid, common_grid, random_cellwise
from mc_stats import Z_THRESHOLD
from measure_model import normalize_cells, validate_schedule

logger = logging.getLogger(__name__)

# 随机图公式检查矩阵所用的固定网格
DIAGRAM_MATRIX_GRID = Grid(((0.0, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, 3.0)))


def _dump_dir(context):
    return context.output_dir / "dumps"


class ScheduleValidationCheck:
    """
    调度校验节点
    在 n 网格上检查嵌套性、窗口质量、a_n 单调性与 μ_n 单调性
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {},
            "optional": {
                "n_values": ("INT_LIST", {"default": None}),
            },
        }

    RETURN_TYPES = ("BOOLEAN", "ROWS", "STRING")
    RETURN_NAMES = ("passed", "rows", "report")
    FUNCTION = "validate"
    CATEGORY = "Chaos Checks/Model"
    DESCRIPTION = "三角阵列调度的有限网格校验"
    OUTPUT_FILE = "validate.csv"
    CSV_HEADER = ("check_id", "check", "pass", "detail")

    def validate(self, context, check_id, n_values=None):
        report = validate_schedule(context.schedule, n_values or context.config.n_grid)
        rows = [(check_id, name, ok, detail) for name, (ok, detail) in report.checks.items()]
        return report.passed, rows, report.format()


class CrossMomentCheck:
    """
    交叉矩节点
    E[I_{k1}^{(n)}(f) I_{k2}^{(n)}(g)] 的蒙特卡洛估计，对比有限 n 精确值与极限值
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "f": ("INTEGRAND",),
                "g": ("INTEGRAND",),
            },
            "optional": {
                "n_values": ("INT_LIST", {"default": None}),
                "replicates": ("INT", {"default": None, "min": 2}),
                "limit_tolerance": ("FLOAT", {"default": 0.02, "min": 0.0}),
                "check_exact": ("BOOLEAN", {"default": True}),
            },
        }

    RETURN_TYPES = ("BOOLEAN", "ROWS", "STRING")
    RETURN_NAMES = ("passed", "rows", "report")
    FUNCTION = "estimate"
    CATEGORY = "Chaos Checks/Moments"
    DESCRIPTION = "交叉矩的有限 n 精确值与极限检查"
    OUTPUT_FILE = "moments.csv"
    CSV_HEADER = ("check_id", "k1", "k2", "n", "R", "mean", "se", "target", "z", "exact", "exact_z")

    def estimate(self, context, check_id, f, g, n_values=None, replicates=None,
                 limit_tolerance=0.02, check_exact=True):
        config = context.config
        f_fn, g_fn = config.integrands[f], config.integrands[g]
        replicates = replicates or config.replicates
        n_values = n_values or config.n_grid

        rows, lines, estimates = [], [f"=== 交叉矩 {f} × {g} (k1 = {f_fn.order}, k2 = {g_fn.order}) ==="], []
        passed = True
        for n in n_values:
            seed = context.seed_for(check_id, n)
            estimate = estimate_cross_moment(
                f_fn, g_fn, n, replicates, seed, context.schedule, context.options
            )
            estimates.append(estimate)
            rows.append((
                check_id, f_fn.order, g_fn.order, n, replicates, estimate.mean,
                estimate.standard_error, estimate.target, estimate.z_score,
                estimate.exact, estimate.exact_z,
            ))
            exact_ok = not check_exact or abs(estimate.exact_z) <= Z_THRESHOLD
            passed = passed and exact_ok
            lines.append(f"{'✅' if exact_ok else '❌'} n = {n}: {estimate.describe()}")
            if context.options.dump_counts:
                dump_counts(
                    _dump_dir(context) / f"{check_id}_n{n}_counts.csv", n,
                    common_grid(f_fn.grid, g_fn.grid), context.schedule, seed, replicates,
                )

        # 与极限的距离沿 n 不增 (允许合并标准误 4 倍以内的波动)
        trend_ok = all(
            later.target_gap() <= earlier.target_gap()
            + Z_THRESHOLD * math.hypot(earlier.standard_error, later.standard_error)
            for earlier, later in zip(estimates, estimates[1:])
        )
        final = estimates[-1]
        final_ok = final.target_gap() <= max(Z_THRESHOLD * final.standard_error, limit_tolerance)
        lines.append(f"{'✅' if trend_ok else '❌'} |mean − limit| 沿 n 递减")
        lines.append(
            f"{'✅' if final_ok else '❌'} 最终估计与极限 {final.target:.6g} 相差 {final.target_gap():.4g}"
        )
        return passed and trend_ok and final_ok, rows, "\n".join(lines)


class MeanFormulaCheck:
    """
    均值公式节点
    I_k^{(n)}(f) 的蒙特卡洛均值对比 k!·B_{n,k}·(n/a_n)^{k/2}·P_n^k(f)
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "f": ("INTEGRAND",),
            },
            "optional": {
                "n_values": ("INT_LIST", {"default": None}),
                "replicates": ("INT", {"default": None, "min": 2}),
            },
        }

    RETURN_TYPES = ("BOOLEAN", "ROWS", "STRING")
    RETURN_NAMES = ("passed", "rows", "report")
    FUNCTION = "check"
    CATEGORY = "Chaos Checks/Moments"
    DESCRIPTION = "多重经验积分的精确均值检查"
    OUTPUT_FILE = "mean.csv"
    CSV_HEADER = ("check_id", "k", "n", "R", "mean", "se", "target", "z")

    def check(self, context, check_id, f, n_values=None, replicates=None):
        config = context.config
        f_fn = config.integrands[f]
        replicates = replicates or config.replicates
        rows, lines, passed = [], [f"=== 均值公式 {f} (k = {f_fn.order}) ==="], True
        for n in n_values or config.n_grid:
            seed = context.seed_for(check_id, n)
            estimate = check_mean_formula(
                f_fn, f_fn.order, n, replicates, seed, context.schedule, context.options
            )
            ok = estimate.passed()
            passed = passed and ok
            rows.append((
                check_id, f_fn.order, n, replicates, estimate.mean, estimate.standard_error,
                estimate.target, estimate.z_score,
            ))
            lines.append(f"{'✅' if ok else '❌'} n = {n}: {estimate.describe()}")
            if context.options.dump_counts:
                dump_counts(
                    _dump_dir(context) / f"{check_id}_n{n}_counts.csv", n, f_fn.grid,
                    context.schedule, seed, replicates,
                )
        return passed, rows, "\n".join(lines)


class DiagramIdentityCheck:
    """
    乘积公式节点
    每次实现上验证 I(f)I(g) = Σ_{l,p} 系数·|𝓑(l,p)|·I(平均收缩)
    可给定一对被积函数，也可生成随机检查矩阵
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {},
            "optional": {
                "f": ("INTEGRAND", {"default": None}),
                "g": ("INTEGRAND", {"default": None}),
                "random_pairs": ("INT", {"default": 0, "min": 0}),
                "max_order": ("INT", {"default": 3, "min": 1, "max": 4}),
                "n": ("INT", {"default": 500, "min": 1}),
                "replicates": ("INT", {"default": 100, "min": 1}),
                "tolerance": ("FLOAT", {"default": DIAGRAM_TOLERANCE, "min": 0.0}),
            },
        }

    RETURN_TYPES = ("BOOLEAN", "ROWS", "STRING")
    RETURN_NAMES = ("passed", "rows", "report")
    FUNCTION = "check"
    CATEGORY = "Chaos Checks/Diagrams"
    DESCRIPTION = "图公式 (乘积公式) 的逐次实现恒等式检查"
    OUTPUT_FILE = "diagram.csv"
    CSV_HEADER = ("check_id", "pair", "l", "p", "count", "coefficient", "empirical_integral_value")

    def _pairs(self, context, check_id, f, g, random_pairs, max_order):
        pairs = []
        if f is not None and g is not None:
            pairs.append((f"{f}×{g}", context.config.integrands[f], context.config.integrands[g]))
        rng = np.random.default_rng(derive_seed(context.config.master_seed, check_id))
        for k1, k2 in itertools.product(range(1, max_order + 1), repeat=2):
            for index in range(random_pairs):
                pairs.append((
                    f"random({k1},{k2})#{index}",
                    random_cellwise(k1, DIAGRAM_MATRIX_GRID, rng),
                    random_cellwise(k2, DIAGRAM_MATRIX_GRID, rng),
                ))
        return pairs

    def check(self, context, check_id, f=None, g=None, random_pairs=0, max_order=3, n=500,
              replicates=100, tolerance=DIAGRAM_TOLERANCE):
        pairs = self._pairs(context, check_id, f, g, random_pairs, max_order)
        if not pairs:
            return False, [], f"⚠️ {check_id}: 没有可检查的被积函数对"

        rows, lines, worst = [], [f"=== 乘积公式检查 (n = {n}, R = {replicates}) ==="], 0.0
        passed = True
        for index, (label, f_fn, g_fn) in enumerate(pairs):
            seed = context.seed_for(check_id, index)
            try:
                result = check_diagram_identity(
                    f_fn, g_fn, n, replicates, seed, context.schedule, context.options
                )
            except ChaosToolError as e:
                passed = False
                lines.append(f"❌ {label}: {e}")
                continue
            ok = result.passed(tolerance)
            passed = passed and ok
            worst = max(worst, result.max_relative_error)
            for term, value in zip(result.terms, result.term_values):
                rows.append((check_id, label, term.l, term.p, term.count, term.coefficient, float(value)))
            if not ok:
                lines.append(f"❌ {label}: 最大相对误差 {result.max_relative_error:.3g}")
        lines.append(
            f"{'✅' if passed else '❌'} {len(pairs)} 对被积函数，最大相对误差 {worst:.3g} (阈值 {tolerance:g})"
        )
        return passed, rows, "\n".join(lines)


class FLimitSweepCheck:
    """
    F 双线性型扫描节点
    确定性计算 F_l^{(n)}(f, g) 并检查向极限的单调趋近
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "f": ("INTEGRAND",),
                "g": ("INTEGRAND",),
            },
            "optional": {
                "l_values": ("INT_LIST", {"default": None}),
                "n_values": ("INT_LIST", {"default": None}),
            },
        }

    RETURN_TYPES = ("BOOLEAN", "ROWS", "STRING")
    RETURN_NAMES = ("passed", "rows", "report")
    FUNCTION = "sweep"
    CATEGORY = "Chaos Checks/Diagrams"
    DESCRIPTION = "F_l^{(n)} 的确定性扫描与趋势检查"
    OUTPUT_FILE = "flimits.csv"
    CSV_HEADER = ("check_id", "l", "n", "value", "limit")

    def sweep(self, context, check_id, f, g, l_values=None, n_values=None):
        f_fn, g_fn = context.config.integrands[f], context.config.integrands[g]
        if l_values is None:
            l_values = list(range(min(f_fn.order, g_fn.order) + 1))
        result = f_limit_sweep(f_fn, g_fn, l_values, n_values or context.config.n_grid, context.schedule)
        rows = [(check_id, row.l, row.n, row.value, row.limit) for row in result.rows]
        lines = [f"=== F_l 扫描 {f} × {g} ==="]
        for l, ok in result.trends.items():
            values = ", ".join(f"{row.value:.6g}" for row in result.rows if row.l == l)
            lines.append(f"{'✅' if ok else '❌'} l = {l}: {values}")
        return result.passed, rows, "\n".join(lines)


class ConvergenceCheck:
    """
    弱收敛节点
    截断经验混沌 (K = K_n) 与极限混沌的双样本 KS 检验
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "h": ("CHAOS",),
            },
            "optional": {
                "n_values": ("INT_LIST", {"default": None}),
                "replicates": ("INT", {"default": 2000, "min": 2}),
                "c": ("FLOAT", {"default": None, "min": 0.0}),
                "epsilon": ("FLOAT", {"default": None, "min": 0.0, "max": 1.0}),
                "p_threshold": ("FLOAT", {"default": 0.005, "min": 0.0, "max": 1.0}),
            },
        }

    RETURN_TYPES = ("BOOLEAN", "ROWS", "STRING")
    RETURN_NAMES = ("passed", "rows", "report")
    FUNCTION = "converge"
    CATEGORY = "Chaos Checks/Convergence"
    DESCRIPTION = "截断混沌向极限混沌的分布收敛检查"
    OUTPUT_FILE = "converge.csv"
    CSV_HEADER = ("check_id", "n", "K", "ks_stat", "p_value", "R")

    def converge(self, context, check_id, h, n_values=None, replicates=2000, c=None,
                 epsilon=None, p_threshold=0.005):
        config = context.config
        chaos = config.chaos[h]
        k_rule = (c or config.k_rule[0], epsilon or config.k_rule[1])
        n_values = n_values or config.n_grid
        seed = context.seed_for(check_id)
        result = ks_convergence(chaos, n_values, replicates, k_rule, seed, context.schedule, context.options)

        rows = [
            (check_id, r.n, r.k_used, r.statistic, r.p_value, replicates) for r in result.reports
        ]
        lines = [f"=== 弱收敛 {h} (c = {k_rule[0]:g}, ε = {k_rule[1]:g}) ==="]
        lines.extend(f"📊 {r.describe()}" for r in result.reports)
        final_ok = result.final_p_value > p_threshold
        lines.append(f"{'✅' if result.trend_ok else '❌'} KS 统计量沿 n 递减")
        lines.append(f"{'✅' if final_ok else '❌'} 最终 p 值 {result.final_p_value:.4g} > {p_threshold:g}")

        if context.options.dump_counts or context.options.dump_gaussians:
            for n in n_values:
                master = derive_seed(seed, "converge", n)
                if context.options.dump_counts:
                    dump_counts(
                        _dump_dir(context) / f"{check_id}_n{n}_counts.csv", n, chaos.grid,
                        context.schedule, master, replicates,
                    )
                if context.options.dump_gaussians:
                    dump_gaussians(
                        _dump_dir(context) / f"{check_id}_n{n}_gaussians.csv", chaos.grid,
                        context.schedule.control, master, replicates,
                    )
        return result.trend_ok and final_ok, rows, "\n".join(lines)


class GaussianityCheck:
    """
    高斯性节点
    W_n(B) 的样本偏度与超额峰度 (jackknife 标准误)
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {},
            "optional": {
                "cells": ("INTERVALS", {"default": [[0.0, 1.0]]}),
                "n": ("INT", {"default": 10**6, "min": 1}),
                "replicates": ("INT", {"default": None, "min": 1000}),
            },
        }

    RETURN_TYPES = ("BOOLEAN", "ROWS", "STRING")
    RETURN_NAMES = ("passed", "rows", "report")
    FUNCTION = "check"
    CATEGORY = "Chaos Checks/Convergence"
    DESCRIPTION = "归一化经验测度的偏度/峰度检查"
    OUTPUT_FILE = "gaussianity.csv"
    CSV_HEADER = (
        "check_id", "n", "R", "p_n", "skewness", "skewness_se", "skewness_exact", "skewness_z",
        "excess_kurtosis", "excess_kurtosis_se", "kurtosis_exact", "kurtosis_z",
        "skewness_limit_z", "kurtosis_limit_z",
    )

    def check(self, context, check_id, cells=None, n=10**6, replicates=None):
        cells = normalize_cells(cells or [[0.0, 1.0]])
        replicates = replicates or context.config.replicates
        seed = context.seed_for(check_id, n)
        result = gaussianity_check(cells, n, replicates, seed, context.schedule, context.options)
        shape = result.shape
        rows = [(
            check_id, n, replicates, result.p, shape.skewness, shape.skewness_se,
            shape.skewness_target, shape.skewness_z, shape.excess_kurtosis, shape.excess_kurtosis_se,
            shape.kurtosis_target, shape.kurtosis_z, shape.limit_skewness_z, shape.limit_kurtosis_z,
        )]
        lines = [
            f"=== W_n 高斯性 (n = {n}, P_n(B) = {result.p:.3e}) ===",
            f"{'✅' if result.passed else '❌'} {shape.describe()}",
        ]
        if not shape.degenerate:
            lines.append(
                f"ℹ️ 相对高斯极限: skew z = {shape.limit_skewness_z:+.2f}, "
                f"ex-kurt z = {shape.limit_kurtosis_z:+.2f}"
            )
        if result.note:
            lines.append(f"ℹ️ {result.note}")
        if context.options.dump_counts:
            dump_counts(
                _dump_dir(context) / f"{check_id}_n{n}_counts.csv", n, Grid(cells),
                context.schedule, seed, replicates,
            )
        return result.passed, rows, "\n".join(lines)


# 检查注册，键为命令行子命令名
CHECK_CLASS_MAPPINGS = {
    "validate": ScheduleValidationCheck,
    "moments": CrossMomentCheck,
    "mean": MeanFormulaCheck,
    "diagram-check": DiagramIdentityCheck,
    "flimits": FLimitSweepCheck,
    "converge": ConvergenceCheck,
    "gaussianity": GaussianityCheck,
}

CHECK_DISPLAY_NAME_MAPPINGS = {
    "validate": "🧭 调度校验",
    "moments": "📊 交叉矩",
    "mean": "📐 均值公式",
    "diagram-check": "🔗 乘积公式",
    "flimits": "📉 F_l 扫描",
    "converge": "🎯 弱收敛",
    "gaussianity": "🔔 高斯性",
}
