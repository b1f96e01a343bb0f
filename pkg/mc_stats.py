"""
蒙特卡洛统计模块
补偿求和的均值与标准误、双样本 KS 检验、偏度/超额峰度及其 jackknife 标准误
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp, kurtosis, skew

from errors import DomainError

logger = logging.getLogger(__name__)

Z_THRESHOLD = 4.0


@dataclass
class MomentEstimate:
    """蒙特卡洛均值估计: z = (mean − target)/SE，target 缺省时不计算"""

    mean: float
    standard_error: float
    replicates: int
    target: float = None
    exact: float = None
    z_score: float = None

    def __post_init__(self):
        if self.standard_error < 0:
            raise DomainError("标准误不能为负")
        if self.target is not None and self.z_score is None:
            self.z_score = _z(self.mean, self.target, self.standard_error)

    def passed(self, threshold=Z_THRESHOLD):
        return self.z_score is not None and abs(self.z_score) <= threshold

    @property
    def exact_z(self):
        return None if self.exact is None else _z(self.mean, self.exact, self.standard_error)

    def target_gap(self):
        return None if self.target is None else abs(self.mean - self.target)

    def describe(self):
        text = f"mean = {self.mean:.6g} ± {self.standard_error:.3g} (R = {self.replicates})"
        if self.target is not None:
            text += f", target = {self.target:.6g}, z = {self.z_score:+.2f}"
        if self.exact is not None:
            text += f", exact = {self.exact:.6g} (z = {self.exact_z:+.2f})"
        return text


def _z(mean, target, standard_error):
    if standard_error > 0:
        return (mean - target) / standard_error
    return 0.0 if math.isclose(mean, target, rel_tol=1e-12, abs_tol=1e-12) else math.inf


def estimate_mean(samples, target=None, exact=None):
    """按副本顺序做补偿求和，SE 取样本方差"""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    R = samples.size
    if R < 2:
        raise DomainError(f"至少需要 2 个副本，得到 {R}")
    mean = math.fsum(samples) / R
    variance = math.fsum((samples - mean) ** 2) / (R - 1)
    return MomentEstimate(mean, math.sqrt(variance / R), R, target, exact)


@dataclass
class KSReport:
    """单个 n 上经验混沌与极限混沌的双样本 KS 结果"""

    n: int
    k_used: int
    statistic: float
    p_value: float
    size_empirical: int
    size_limit: int
    note: str = ""

    def describe(self):
        text = (
            f"n = {self.n}, K = {self.k_used}: D = {self.statistic:.4f}, "
            f"p = {self.p_value:.4g} ({self.size_empirical} vs {self.size_limit})"
        )
        return text + (f" [{self.note}]" if self.note else "")


def ks_two_sample(empirical, limit, n, k_used):
    """双样本 KS 统计量与渐近 p 值；两侧均为常数时直接比较"""
    empirical = np.asarray(empirical, dtype=np.float64).ravel()
    limit = np.asarray(limit, dtype=np.float64).ravel()
    if np.ptp(empirical) == 0.0 and np.ptp(limit) == 0.0:
        same = math.isclose(empirical[0], limit[0], rel_tol=1e-12, abs_tol=1e-12)
        return KSReport(
            n, k_used, 0.0 if same else 1.0, 1.0 if same else 0.0,
            empirical.size, limit.size, "两侧样本均为常数",
        )
    result = ks_2samp(empirical, limit, method="asymp")
    return KSReport(
        n, k_used, float(result.statistic), float(result.pvalue), empirical.size, limit.size
    )


def _leave_one_out_shape(sums, powers, count):
    """留一幂和 → 每个副本被剔除后的 (偏度, 超额峰度)"""
    s1, s2, s3, s4 = (total - p for total, p in zip(sums, powers))
    m = s1 / count
    m2 = s2 / count - m**2
    m3 = s3 / count - 3 * m * s2 / count + 2 * m**3
    m4 = s4 / count - 4 * m * s3 / count + 6 * m**2 * s2 / count - 3 * m**4
    return m3 / m2**1.5, m4 / m2**2 - 3.0


@dataclass
class ShapeReport:
    """
    偏度与超额峰度及其 jackknife 标准误
    z 相对给定目标 (有限 n 精确值，缺省为 0)；limit_*_z 始终相对高斯极限 0
    """

    skewness: float
    skewness_se: float
    excess_kurtosis: float
    excess_kurtosis_se: float
    replicates: int
    degenerate: bool = False
    skewness_target: float = 0.0
    kurtosis_target: float = 0.0

    @property
    def skewness_z(self):
        return _z(self.skewness, self.skewness_target, self.skewness_se)

    @property
    def kurtosis_z(self):
        return _z(self.excess_kurtosis, self.kurtosis_target, self.excess_kurtosis_se)

    @property
    def limit_skewness_z(self):
        return _z(self.skewness, 0.0, self.skewness_se)

    @property
    def limit_kurtosis_z(self):
        return _z(self.excess_kurtosis, 0.0, self.excess_kurtosis_se)

    def passed(self, threshold=Z_THRESHOLD):
        if self.degenerate:
            return False
        return abs(self.skewness_z) <= threshold and abs(self.kurtosis_z) <= threshold

    def describe(self):
        if self.degenerate:
            return f"样本为常数 (R = {self.replicates})，偏度与峰度无定义"
        return (
            f"skew = {self.skewness:+.4f} ± {self.skewness_se:.4f} "
            f"(目标 {self.skewness_target:+.4f}, z = {self.skewness_z:+.2f}), "
            f"ex-kurt = {self.excess_kurtosis:+.4f} ± {self.excess_kurtosis_se:.4f} "
            f"(目标 {self.kurtosis_target:+.4f}, z = {self.kurtosis_z:+.2f}), R = {self.replicates}"
        )


def shape_statistics(samples, skewness_target=0.0, kurtosis_target=0.0):
    """样本偏度、超额峰度 (scipy)，jackknife 标准误用留一幂和向量化计算"""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    R = samples.size
    if R < 3:
        raise DomainError(f"至少需要 3 个副本，得到 {R}")
    if np.ptp(samples) == 0.0:
        return ShapeReport(
            0.0, 0.0, 0.0, 0.0, R, degenerate=True,
            skewness_target=skewness_target, kurtosis_target=kurtosis_target,
        )

    skewness = float(skew(samples))
    kurtosis_value = float(kurtosis(samples, fisher=True))

    centered = samples - math.fsum(samples) / R
    powers = [centered**p for p in range(1, 5)]
    sums = [math.fsum(p) for p in powers]
    skew_loo, kurt_loo = _leave_one_out_shape(sums, powers, R - 1)
    factor = (R - 1) / R
    skew_se = math.sqrt(factor * math.fsum((skew_loo - skew_loo.mean()) ** 2))
    kurt_se = math.sqrt(factor * math.fsum((kurt_loo - kurt_loo.mean()) ** 2))
    return ShapeReport(
        skewness, skew_se, kurtosis_value, kurt_se, R,
        skewness_target=skewness_target, kurtosis_target=kurtosis_target,
    )
