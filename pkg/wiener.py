"""
维纳积分模块
网格上的布朗随机测度抽样，以及多重 Wiener–Itô 积分与混沌级数的逐次实现精确求值
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_hermitenorm

from errors import DomainError
from integrands import Grid, TensorPowerFunction, as_cellwise, evaluate_patterns, h_norm_terms
from measure_model import ControlMeasure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianCellRealization:
    """各单元上的 W(A_i) ~ N(0, μ(A_i))，相互独立；values 可为一维或 (副本 × 单元)"""

    grid: Grid
    values: np.ndarray
    masses: np.ndarray
    seed_info: tuple = ()

    @property
    def replicates(self):
        return 1 if np.ndim(self.values) == 1 else self.values.shape[0]


def sample_gaussian_cells(grid, rng, control=None, seed_info=()):
    control = control or ControlMeasure()
    masses = _masses(grid, control)
    values = rng.standard_normal(len(grid)) * np.sqrt(masses)
    return GaussianCellRealization(grid, values, masses, seed_info)


def sample_gaussian_cells_batch(grid, rngs, control=None, seed_info=()):
    """每个副本使用各自的生成器，按副本顺序堆叠"""
    control = control or ControlMeasure()
    masses = _masses(grid, control)
    scale = np.sqrt(masses)
    values = np.stack([rng.standard_normal(len(grid)) * scale for rng in rngs])
    return GaussianCellRealization(grid, values, masses, seed_info)


def _masses(grid, control):
    lefts = np.array([c[0] for c in grid.cells])
    rights = np.array([c[1] for c in grid.cells])
    return np.asarray(control.mass(lefts, rights), dtype=np.float64)


def hermite(m, x):
    """概率论 Hermite 多项式 He_m(x)，He_{m+1} = x·He_m − m·He_{m−1}"""
    if int(m) != m or m < 0:
        raise DomainError(f"Hermite 阶数必须为非负整数，得到 {m}")
    value = eval_hermitenorm(int(m), x)
    return float(value) if np.ndim(value) == 0 else value


def wiener_pattern_table(realization, m_max):
    """φ_wie(A, m) = μ(A)^{m/2}·He_m(W(A)/μ(A)^{1/2})，μ(A) = 0 且 m ≥ 1 时为 0"""
    values = np.asarray(realization.values, dtype=np.float64)
    scale = np.sqrt(realization.masses)
    degenerate = scale == 0.0
    safe = np.where(degenerate, 1.0, scale)
    orders = np.arange(m_max + 1).reshape((-1,) + (1,) * values.ndim)
    table = safe**orders * eval_hermitenorm(orders, values / safe)
    if degenerate.any():
        table[1:, ..., degenerate] = 0.0
    return table


def _max_multiplicity(f):
    if isinstance(f, TensorPowerFunction):
        return f.order
    return as_cellwise(f).max_multiplicity


def wiener_integral(f, realization):
    """
    I_k(f): 每个系数按单元重数分组，值为 Σ coeff·∏ φ_wie(A_j, m_j)
    简单函数 (含重复下标的系数全为 0) 只用到一阶，即 Σ coeff·∏ W(A_j)
    """
    f = f.on_grid(realization.grid)
    simple = not isinstance(f, TensorPowerFunction) and as_cellwise(f).vanishes_on_repeats
    table = wiener_pattern_table(realization, 1 if simple else _max_multiplicity(f))
    return evaluate_patterns(f, table)


def chaos_series(h, K, realization):
    """Σ_{k=0}^{K} I_k(h^{(k)})，所有阶共用同一次实现"""
    present = [h.component(k) for k in range(int(K) + 1)]
    present = [c.on_grid(realization.grid) for c in present if c is not None]
    batch = np.shape(realization.values)[:-1]
    total = np.zeros(batch)
    if not present:
        return total if batch else 0.0
    table = wiener_pattern_table(realization, max(_max_multiplicity(c) for c in present))
    for component in present:
        total = total + evaluate_patterns(component, table)
    return total if batch else float(total)


def limit_second_moment(h, K=None, schedule=None):
    """E[(Σ_{k≤K} I_k(h^{(k)}))²] = Σ_{k≤K} k!‖h̃^{(k)}‖²，k = 0 项为 (h^{(0)})²"""
    terms = h_norm_terms(h, schedule)
    K = h.k_max if K is None else int(K)
    return math.fsum(terms[: K + 1])
