"""
经验积分模块
三角阵列抽样 (多项分布充分统计量)、归一化经验测度 W_n、多重经验积分 I_k^{(n)} 的精确逐次实现求值
"""

import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from errors import BudgetExceededError, DomainError, ScheduleGridError
from integrands import (
    Grid,
    TensorPowerFunction,
    as_cellwise,
    evaluate_patterns,
)
from measure_model import TriangularArraySchedule, normalize_cells

logger = logging.getLogger(__name__)

MAX_MULTIPLICITY = 20
BRUTEFORCE_BUDGET = 10**7
PROBABILITY_SLACK = 1e-12


@dataclass(frozen=True)
class CellCounts:
    """
    各网格单元的占有数 N_A，最后一列为 "E_n 中其余部分"
    counts 可为一维 (单次实现) 或二维 (副本 × 单元)
    """

    n: int
    grid: Grid
    counts: np.ndarray
    schedule: TriangularArraySchedule
    seed_info: tuple = ()

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape[-1] != len(self.grid) + 1:
            raise DomainError(f"计数列数 {counts.shape[-1]} 应为单元数 + 1 = {len(self.grid) + 1}")
        if (counts < 0).any() or (counts.sum(axis=-1) != self.n).any():
            raise DomainError(f"计数必须非负且总和为 n = {self.n}")
        object.__setattr__(self, "counts", counts)

    @property
    def cell_counts(self):
        return self.counts[..., :-1]

    @property
    def rest(self):
        return self.counts[..., -1]

    @property
    def replicates(self):
        return 1 if self.counts.ndim == 1 else self.counts.shape[0]


@dataclass(frozen=True)
class PointSample:
    """逐点样本 X_{n,1..n}，仅用作暴力求值的独立参照"""

    n: int
    points: np.ndarray
    schedule: TriangularArraySchedule

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.shape != (self.n,):
            raise DomainError(f"需要 {self.n} 个点，得到 {points.shape}")
        if self.n and (points.min() < 0.0 or points.max() > self.schedule.window_end(self.n)):
            raise DomainError("样本点必须落在 E_n 内")
        object.__setattr__(self, "points", points)


def cell_probabilities(n, grid, schedule):
    """(p_1, …, p_t, p_rest)，p_i = P_n(A_i)"""
    probabilities = schedule.cell_masses(grid.cells, n, kind="p_n")
    total = float(probabilities.sum())
    if total > 1.0 + PROBABILITY_SLACK:
        raise ScheduleGridError(f"网格单元在 P_{n} 下的总概率 {total:.15g} 超过 1")
    if total > 1.0:
        probabilities = probabilities / total
        total = 1.0
    return np.append(probabilities, max(0.0, 1.0 - total))


def draw_counts(n, grid, rng, schedule=None, seed_info=()):
    """多项分布抽取 (N_{A_1}, …, N_{A_t}, N_rest)，代价与 n 无关"""
    schedule = schedule or TriangularArraySchedule.default()
    if int(n) != n or n < 0:
        raise DomainError(f"n 必须为非负整数，得到 {n}")
    n = int(n)
    if n == 0:
        return CellCounts(0, grid, np.zeros(len(grid) + 1, dtype=np.int64), schedule, seed_info)
    probabilities = cell_probabilities(n, grid, schedule)
    return CellCounts(n, grid, rng.multinomial(n, probabilities), schedule, seed_info)


def draw_counts_batch(n, grid, rngs, schedule=None, seed_info=()):
    """每个副本使用各自的生成器抽样，按副本顺序堆叠为二维计数"""
    schedule = schedule or TriangularArraySchedule.default()
    if n == 0:
        counts = np.zeros((len(rngs), len(grid) + 1), dtype=np.int64)
    else:
        probabilities = cell_probabilities(n, grid, schedule)
        counts = np.stack([rng.multinomial(n, probabilities) for rng in rngs])
    return CellCounts(int(n), grid, counts, schedule, seed_info)


def draw_points(n, schedule, rng):
    """在 E_n 上按 P_n 逐点抽样: 对分段常数密度做逆 CDF 变换"""
    end = schedule.window_end(n)
    total = schedule.window_mass(n)
    u = rng.uniform(0.0, total, size=int(n))
    points = np.minimum(schedule.control.inverse_cdf(u), end)
    return PointSample(int(n), points, schedule)


def counts_from_points(sample, grid):
    """把逐点样本装箱为 CellCounts"""
    idx = grid.locate(sample.points)
    counts = np.bincount(idx[idx >= 0], minlength=len(grid))
    rest = sample.n - int(counts.sum())
    return CellCounts(sample.n, grid, np.append(counts, rest), sample.schedule)


def _cell_indices(grid, cells):
    """区间并集对应的网格单元下标，必须与网格对齐"""
    target = Grid(normalize_cells(cells))
    return sorted({j for subs in target.subcells(grid) for j in subs})


def w_n(counts, cells):
    """W_n(B) = a_n^{−1/2}·(N(B) − n·P_n(B))，B 为网格单元的并"""
    indices = _cell_indices(counts.grid, cells)
    n, schedule = counts.n, counts.schedule
    observed = counts.cell_counts[..., indices].sum(axis=-1)
    expected = n * float(schedule.cell_masses(counts.grid.cells, n, kind="p_n")[indices].sum())
    values = (observed - expected) / math.sqrt(schedule.a_n(n))
    return float(values) if np.ndim(values) == 0 else values


def _intersection(cells_a, cells_b):
    pieces = []
    for a0, b0 in normalize_cells(cells_a):
        for a1, b1 in normalize_cells(cells_b):
            low, high = max(a0, a1), min(b0, b1)
            if low < high:
                pieces.append((low, high))
    return pieces


def w_n_covariance(schedule, n, cells_a, cells_b):
    """Cov(W_n(B₁), W_n(B₂)) = (n/a_n)(P_n(B₁∩B₂) − P_n(B₁)P_n(B₂))"""
    overlap = _intersection(cells_a, cells_b)
    p_overlap = schedule.p_n(overlap, n) if overlap else 0.0
    return schedule.scale(n) * (p_overlap - schedule.p_n(cells_a, n) * schedule.p_n(cells_b, n))


def empirical_pattern_table(counts, m_max):
    """
    φ_emp(A, m) = a_n^{−m/2}·Σ_d C(m,d)(N_A)_d(−nP_n(A))^{m−d}，m = 0..m_max
    用三项递推 φ_{m+1} = a_n^{−1/2}(N − q − m)φ_m − (q/a_n)·m·φ_{m−1} 求值，q = nP_n(A)
    """
    if m_max > MAX_MULTIPLICITY:
        raise DomainError(f"单元重数 {m_max} 超过上限 {MAX_MULTIPLICITY}")
    n, schedule = counts.n, counts.schedule
    a = schedule.a_n(n)
    q = n * schedule.cell_masses(counts.grid.cells, n, kind="p_n")
    occupancy = counts.cell_counts.astype(np.float64)

    table = np.empty((m_max + 1,) + occupancy.shape)
    table[0] = 1.0
    if m_max >= 1:
        table[1] = (occupancy - q) / math.sqrt(a)
    for m in range(1, m_max):
        table[m + 1] = (occupancy - q - m) / math.sqrt(a) * table[m] - (q / a) * m * table[m - 1]
    return table


def phi_empirical_explicit(count, q, a, m):
    """φ_emp 的显式求和形式 (标量参照实现)"""
    if m > MAX_MULTIPLICITY:
        raise DomainError(f"单元重数 {m} 超过上限 {MAX_MULTIPLICITY}")
    total = math.fsum(math.comb(m, d) * math.perm(int(count), d) * (-q) ** (m - d) for d in range(m + 1))
    return total / a ** (m / 2)


def _max_multiplicity(f):
    if isinstance(f, TensorPowerFunction):
        return f.order
    return as_cellwise(f).max_multiplicity


def empirical_integral(f, counts):
    """
    多重经验积分 I_k^{(n)}(f) 的精确值
    每个系数按单元重数 {(A_j, m_j)} 分组，值为 Σ coeff·∏ φ_emp(A_j, m_j)
    """
    f = f.on_grid(counts.grid)
    table = empirical_pattern_table(counts, _max_multiplicity(f))
    return evaluate_patterns(f, table)


def empirical_integral_bruteforce(f, sample, budget=BRUTEFORCE_BUDGET):
    """
    逐点直接展开: 对槽位子集 D 求和，D 上为互不相同的原子，其余槽位对 −nP_n 积分
    复杂度 O((n+1)^k)，仅作参照
    """
    f = as_cellwise(f)
    n, k, schedule = sample.n, f.order, sample.schedule
    if (n + 1) ** k > budget:
        raise BudgetExceededError(f"(n+1)^k = {(n + 1) ** k} 超过暴力求值上限 {budget}")
    if k == 0:
        return f.constant_value

    q = n * schedule.cell_masses(f.grid.cells, n, kind="p_n")
    locations = f.grid.locate(sample.points)

    total = []
    for d in range(k + 1):
        for atom_slots in itertools.combinations(range(k), d):
            measure_slots = [s for s in range(k) if s not in atom_slots]
            # 按原子槽位上的单元投影分组，其余槽位先对 −nP_n 积分
            grouped = defaultdict(float)
            for key, value in f.coeffs.items():
                weight = math.prod(-q[key[s]] for s in measure_slots)
                grouped[tuple(key[s] for s in atom_slots)] += value * weight
            if d == 0:
                total.append(grouped.get((), 0.0))
                continue
            for atoms in itertools.permutations(range(n), d):
                cells = tuple(int(locations[i]) for i in atoms)
                if cells in grouped:
                    total.append(grouped[cells])
    return math.fsum(total) / schedule.a_n(n) ** (k / 2)


def truncated_chaos(h, K, counts):
    """Σ_{k=0}^{K} I_k^{(n)}(h^{(k)})，所有阶共用同一次实现"""
    components = [h.component(k) for k in range(int(K) + 1)]
    present = [c.on_grid(counts.grid) for c in components if c is not None]
    batch = counts.counts.shape[:-1]
    total = np.zeros(batch)
    if not present:
        return total if batch else 0.0
    table = empirical_pattern_table(counts, max(_max_multiplicity(c) for c in present))
    for component in present:
        total = total + evaluate_patterns(component, table)
    return total if batch else float(total)


def k_schedule(n, c=2.0, epsilon=0.5, schedule=None):
    """截断阶 K_n = ⌊c·(ln(n/a_n))^{1−ε}⌋，n/a_n ≤ 1 时返回 0"""
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"ε 必须在 (0, 1) 内，得到 {epsilon}")
    if c <= 0.0:
        raise DomainError(f"c 必须为正，得到 {c}")
    schedule = schedule or TriangularArraySchedule.default()
    ratio = schedule.scale(n)
    if ratio <= 1.0:
        logger.warning("⚠️ n/a_n = %.4g ≤ 1 (n = %d)，截断阶取 0", ratio, n)
        return 0
    return max(0, math.floor(c * math.log(ratio) ** (1.0 - epsilon)))
