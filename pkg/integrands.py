"""
被积函数模块
E^k 上的逐单元常数函数、张量幂、对称化、L² 内积与混沌向量空间 H
所有函数都定义在有限网格上，积分与范数均为闭式
"""

import itertools
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import cached_property, reduce

import numpy as np
from sympy.utilities.iterables import multiset_permutations

from errors import (
    BudgetExceededError,
    ConfigError,
    DomainError,
    GridMismatchError,
    ValidationError,
)
from measure_model import TriangularArraySchedule

logger = logging.getLogger(__name__)

# 稀疏系数的默认非零项上限
NONZERO_BUDGET = 10**6

MEASURES = ("mu", "mu_n", "p_n")


@dataclass(frozen=True)
class Grid:
    """有序、互不相交的有界半开区间 A_1 < A_2 < … < A_t"""

    cells: tuple

    def __post_init__(self):
        cells = []
        for cell in self.cells:
            a, b = float(cell[0]), float(cell[1])
            if not (math.isfinite(a) and math.isfinite(b)):
                raise DomainError(f"网格单元无界: [{a}, {b})")
            if a < 0.0 or b <= a:
                raise ValidationError(f"网格单元非法: [{a}, {b})，需要 0 ≤ a < b")
            cells.append((a, b))
        if not cells:
            raise ValidationError("网格至少需要一个单元")
        cells.sort()
        for (a0, b0), (a1, b1) in zip(cells, cells[1:]):
            if a1 < b0:
                raise ValidationError(f"网格单元重叠: [{a0}, {b0}) 与 [{a1}, {b1})")
        object.__setattr__(self, "cells", tuple(cells))

    @classmethod
    def from_edges(cls, edges):
        """由递增断点序列构造相邻单元"""
        edges = sorted(set(float(e) for e in edges))
        return cls(tuple(zip(edges, edges[1:])))

    def __len__(self):
        return len(self.cells)

    @property
    def edges(self):
        return tuple(sorted({x for cell in self.cells for x in cell}))

    @property
    def right_end(self):
        return self.cells[-1][1]

    def covers(self, a, b):
        return any(ca <= a and b <= cb for ca, cb in self.cells)

    def refine(self, other):
        """公共加细: 断点并集的相邻区间中，落在任一网格单元内的部分"""
        if other is None or other == self:
            return self
        edges = sorted(set(self.edges) | set(other.edges))
        cells = [
            (a, b)
            for a, b in zip(edges, edges[1:])
            if self.covers(a, b) or other.covers(a, b)
        ]
        return Grid(tuple(cells))

    def subcells(self, fine):
        """本网格每个单元在加细网格 fine 中的子单元下标列表"""
        if fine == self:
            return [[i] for i in range(len(self))]
        mapping = []
        for a, b in self.cells:
            inside = [j for j, (fa, fb) in enumerate(fine.cells) if a <= fa and fb <= b]
            tiled = (
                inside
                and fine.cells[inside[0]][0] == a
                and fine.cells[inside[-1]][1] == b
                and all(
                    fine.cells[j0][1] == fine.cells[j1][0] for j0, j1 in zip(inside, inside[1:])
                )
            )
            if not tiled:
                raise GridMismatchError(f"单元 [{a}, {b}) 无法由目标网格的单元拼出")
            mapping.append(inside)
        return mapping

    def locate(self, x):
        """点所在单元的下标，不在任何单元内时为 -1"""
        x = np.asarray(x, dtype=np.float64)
        lefts = np.array([c[0] for c in self.cells])
        rights = np.array([c[1] for c in self.cells])
        idx = np.searchsorted(lefts, x, side="right") - 1
        safe = np.clip(idx, 0, len(self) - 1)
        return np.where((idx >= 0) & (x < rights[safe]), idx, -1)

    def masses(self, measure="mu", schedule=None, n=None):
        return cell_masses(self, measure, schedule, n)

    def describe(self):
        return ", ".join(f"[{a:g},{b:g})" for a, b in self.cells)


def common_grid(*grids):
    grids = [g for g in grids if g is not None]
    if not grids:
        return None
    return reduce(lambda left, right: left.refine(right), grids)


def cell_masses(grid, measure="mu", schedule=None, n=None):
    """网格各单元在 μ、μ_n 或 P_n 下的质量向量"""
    if measure not in MEASURES:
        raise DomainError(f"未知测度 '{measure}'，可选: {', '.join(MEASURES)}")
    if measure != "mu" and n is None:
        raise DomainError(f"测度 {measure} 需要给定 n")
    schedule = schedule or TriangularArraySchedule.default()
    return schedule.cell_masses(grid.cells, n, kind=measure)


def _distinct_arrangements(key):
    counts = Counter(key).values()
    return math.factorial(len(key)) // math.prod(math.factorial(m) for m in counts)


class CellwiseFunction:
    """
    E^k 上的逐单元常数函数
    系数以 0 起始的单元下标元组为键稀疏存储，k = 0 时为单个常数 (键为空元组)
    """

    def __init__(self, order, grid, coeffs=None, budget=NONZERO_BUDGET):
        if int(order) != order or order < 0:
            raise DomainError(f"阶数必须为非负整数，得到 {order}")
        self.order = int(order)
        self.grid = grid
        cleaned = {}
        for key, value in (coeffs or {}).items():
            key = tuple(int(i) for i in key)
            if len(key) != self.order:
                raise ValidationError(f"系数下标 {key} 与阶数 {self.order} 不符")
            if any(i < 0 or i >= len(grid) for i in key):
                raise ValidationError(f"系数下标 {key} 超出网格范围 [0, {len(grid)})")
            value = float(value)
            if not math.isfinite(value):
                raise ValidationError(f"系数 {key} 非有限值")
            if value != 0.0:
                cleaned[key] = value
        if len(cleaned) > budget:
            raise BudgetExceededError(f"非零系数 {len(cleaned)} 超过上限 {budget}")
        self.coeffs = cleaned

    @classmethod
    def constant(cls, value, grid):
        return cls(0, grid, {(): value})

    @classmethod
    def indicator(cls, grid, *cells):
        """单元乘积 A_{i_1} × … × A_{i_k} 的示性函数"""
        return cls(len(cells), grid, {tuple(cells): 1.0})

    def __repr__(self):
        return f"CellwiseFunction(order={self.order}, t={len(self.grid)}, nnz={len(self.coeffs)})"

    @property
    def nnz(self):
        return len(self.coeffs)

    @property
    def constant_value(self):
        if self.order != 0:
            raise DomainError("只有 0 阶函数才有常数值")
        return self.coeffs.get((), 0.0)

    @property
    def vanishes_on_repeats(self):
        """所有含重复下标的系数均为 0 (简单函数类)"""
        return all(len(set(key)) == len(key) for key in self.coeffs)

    @cached_property
    def patterns(self):
        """按单元重数模式分组: [(cells, multiplicities, 系数和)]"""
        grouped = defaultdict(float)
        for key, value in self.coeffs.items():
            grouped[tuple(sorted(Counter(key).items()))] += value
        result = []
        for pattern, total in grouped.items():
            cells = np.array([c for c, _ in pattern], dtype=np.intp)
            mults = np.array([m for _, m in pattern], dtype=np.intp)
            result.append((cells, mults, total))
        return result

    @property
    def max_multiplicity(self):
        return max((max(Counter(key).values(), default=0) for key in self.coeffs), default=0)

    def support_cells(self):
        return sorted({i for key in self.coeffs for i in key})

    def value_at(self, key):
        return self.coeffs.get(tuple(key), 0.0)

    def on_grid(self, fine, budget=NONZERO_BUDGET):
        """在加细网格上重新表示，系数按子单元精确复制"""
        if fine == self.grid:
            return self
        mapping = self.grid.subcells(fine)
        expanded = sum(math.prod(len(mapping[i]) for i in key) for key in self.coeffs)
        if expanded > budget:
            raise BudgetExceededError(f"加细后非零系数 {expanded} 超过上限 {budget}")
        coeffs = {}
        for key, value in self.coeffs.items():
            for combo in itertools.product(*(mapping[i] for i in key)):
                coeffs[combo] = value
        return CellwiseFunction(self.order, fine, coeffs, budget)

    def scaled(self, factor):
        return CellwiseFunction(
            self.order, self.grid, {k: v * factor for k, v in self.coeffs.items()}
        )

    def __mul__(self, factor):
        return self.scaled(float(factor))

    __rmul__ = __mul__

    def __add__(self, other):
        other = as_cellwise(other)
        if other.order != self.order:
            raise DomainError(f"阶数不同无法相加: {self.order} 与 {other.order}")
        left, right = align(self, other)
        coeffs = dict(left.coeffs)
        for key, value in right.coeffs.items():
            coeffs[key] = coeffs.get(key, 0.0) + value
        return CellwiseFunction(self.order, left.grid, coeffs)

    def allclose(self, other, atol=1e-12):
        other = as_cellwise(other)
        if other.order != self.order:
            return False
        left, right = align(self, other)
        keys = set(left.coeffs) | set(right.coeffs)
        return all(abs(left.value_at(k) - right.value_at(k)) <= atol for k in keys)


@dataclass(frozen=True)
class StepFunction:
    """E 上的阶梯函数 g: 每个网格单元一个取值，网格外为 0"""

    grid: Grid
    values: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if len(values) != len(self.grid):
            raise ValidationError(f"阶梯函数取值数 {len(values)} 与单元数 {len(self.grid)} 不符")
        if not all(math.isfinite(v) for v in values):
            raise ValidationError("阶梯函数取值必须有限")
        object.__setattr__(self, "values", values)

    @property
    def order(self):
        return 1

    def as_cellwise(self):
        return CellwiseFunction(1, self.grid, {(i,): v for i, v in enumerate(self.values)})

    def on_grid(self, fine):
        if fine == self.grid:
            return self
        values = np.zeros(len(fine))
        for value, subs in zip(self.values, self.grid.subcells(fine)):
            values[subs] = value
        return StepFunction(fine, tuple(values))


@dataclass(frozen=True)
class TensorPowerFunction:
    """张量幂 g^{⊗k}，语义上等于系数为 ∏ g 值的逐单元函数"""

    base: StepFunction
    power: int

    def __post_init__(self):
        if int(self.power) != self.power or self.power < 1:
            raise DomainError(f"张量幂次必须 ≥ 1，得到 {self.power}")

    @property
    def order(self):
        return int(self.power)

    @property
    def grid(self):
        return self.base.grid

    @property
    def vanishes_on_repeats(self):
        return self.power == 1 or not any(self.base.values)

    def support_cells(self):
        return [i for i, v in enumerate(self.base.values) if v != 0.0]

    def on_grid(self, fine):
        return TensorPowerFunction(self.base.on_grid(fine), self.power)

    def expand(self, budget=NONZERO_BUDGET):
        return expand_tensor_power(self.base, self.power, budget)


def as_cellwise(f, budget=NONZERO_BUDGET):
    if isinstance(f, CellwiseFunction):
        return f
    if isinstance(f, TensorPowerFunction):
        return f.expand(budget)
    if isinstance(f, StepFunction):
        return f.as_cellwise()
    raise ValidationError(f"无法识别的被积函数类型: {type(f).__name__}")


def align(f, g):
    """把两个被积函数放到公共加细网格上"""
    grid = f.grid.refine(g.grid)
    return f.on_grid(grid), g.on_grid(grid)


@dataclass(frozen=True)
class ChaosVector:
    """混沌向量 h = (h^{(0)}, …, h^{(K_max)})，None 表示该阶为 0，超出 K_max 的阶均为 0"""

    components: tuple

    def __post_init__(self):
        components = tuple(self.components)
        for k, component in enumerate(components):
            if component is not None and component.order != k:
                raise ValidationError(f"第 {k} 个分量的阶数为 {component.order}")
        object.__setattr__(self, "components", components)

    @property
    def k_max(self):
        return len(self.components) - 1

    def component(self, k):
        if 0 <= k < len(self.components):
            return self.components[k]
        return None

    @property
    def grid(self):
        return common_grid(*(c.grid for c in self.components if c is not None))

    def on_grid(self, fine):
        return ChaosVector(tuple(None if c is None else c.on_grid(fine) for c in self.components))


def symmetrize(f, budget=NONZERO_BUDGET):
    """f̃(x) = (1/k!) Σ_σ f(σx)：同一多重集的系数求和后平均分配到其全部不同排列"""
    if isinstance(f, TensorPowerFunction) or f.order <= 1:
        return f
    sums = defaultdict(float)
    for key, value in f.coeffs.items():
        sums[tuple(sorted(key))] += value
    total_terms = sum(_distinct_arrangements(key) for key in sums)
    if total_terms > budget:
        raise BudgetExceededError(f"对称化后非零系数 {total_terms} 超过上限 {budget}")
    coeffs = {}
    for key, total in sums.items():
        arrangements = list(multiset_permutations(list(key)))
        share = total / len(arrangements)
        for perm in arrangements:
            coeffs[tuple(perm)] = share
    return CellwiseFunction(f.order, f.grid, coeffs, budget)


def tensor(f, g, budget=NONZERO_BUDGET):
    """(f ⊗ g)(x, y) = f(x) g(y)，在公共加细网格上逐系数相乘"""
    f, g = align(as_cellwise(f, budget), as_cellwise(g, budget))
    if len(f.coeffs) * len(g.coeffs) > budget:
        raise BudgetExceededError(
            f"张量积非零系数 {len(f.coeffs) * len(g.coeffs)} 超过上限 {budget}"
        )
    coeffs = {
        kf + kg: vf * vg for kf, vf in f.coeffs.items() for kg, vg in g.coeffs.items()
    }
    return CellwiseFunction(f.order + g.order, f.grid, coeffs, budget)


def _weighted_product(key, masses, weights=None):
    if weights is None:
        return math.prod(masses[i] for i in key)
    return math.prod(masses[i] * weights[i] for i in key)


def l2_inner(f, g, measure="mu", schedule=None, n=None):
    """⟨f, g⟩ 在 μ^k、μ_n^k 或 P_n^k 下的内积"""
    if f.order != g.order:
        raise DomainError(f"内积要求阶数相同，得到 {f.order} 与 {g.order}")
    f, g = align(f, g)
    masses = cell_masses(f.grid, measure, schedule, n)

    if isinstance(f, TensorPowerFunction) and isinstance(g, TensorPowerFunction):
        base = math.fsum(a * b * m for a, b, m in zip(f.base.values, g.base.values, masses))
        return base**f.order
    if isinstance(g, TensorPowerFunction):
        f, g = g, f
    if isinstance(f, TensorPowerFunction):
        values = f.base.values
        return math.fsum(
            value * math.prod(values[i] * masses[i] for i in key) for key, value in g.coeffs.items()
        )

    small, large = (f, g) if len(f.coeffs) <= len(g.coeffs) else (g, f)
    return math.fsum(
        value * large.coeffs[key] * _weighted_product(key, masses)
        for key, value in small.coeffs.items()
        if key in large.coeffs
    )


def integrate(f, measure="p_n", schedule=None, n=None):
    """f 在乘积测度上的全积分 (P_n^k(f) 或 μ^k(f) 等)"""
    if f.order == 0:
        return as_cellwise(f).constant_value
    masses = cell_masses(f.grid, measure, schedule, n)
    if isinstance(f, TensorPowerFunction):
        return math.fsum(v * m for v, m in zip(f.base.values, masses)) ** f.order
    f = as_cellwise(f)
    return math.fsum(value * _weighted_product(key, masses) for key, value in f.coeffs.items())


def norm(f, measure="mu", schedule=None, n=None):
    return math.sqrt(max(l2_inner(f, f, measure, schedule, n), 0.0))


def h_norm_terms(h, schedule=None):
    """各阶贡献 k!‖h̃^{(k)}‖²_{L²(μ^k)}，未给出的阶为 0"""
    terms = []
    for k, component in enumerate(h.components):
        if component is None:
            terms.append(0.0)
            continue
        sym = symmetrize(component)
        terms.append(math.factorial(k) * l2_inner(sym, sym, "mu", schedule))
    return terms


def h_norm(h, schedule=None):
    """‖h‖_H = (Σ_k k!‖h̃^{(k)}‖²)^{1/2}"""
    return math.sqrt(math.fsum(h_norm_terms(h, schedule)))


def expand_tensor_power(g, k, budget=NONZERO_BUDGET):
    """g^{⊗k} 展开为逐单元函数，系数为 ∏_m g(A_{i_m})"""
    if isinstance(g, TensorPowerFunction):
        g, k = g.base, g.power * k
    if int(k) != k or k < 1:
        raise DomainError(f"张量幂次必须 ≥ 1，得到 {k}")
    support = [i for i, v in enumerate(g.values) if v != 0.0]
    if support and k * math.log(len(support)) > math.log(budget):
        raise BudgetExceededError(
            f"g^⊗{k} 有 {len(support)}^{k} 项，超过上限 {budget}；"
            "请直接使用 TensorPowerFunction，经验积分模块会走张量幂快速路径"
        )
    coeffs = {
        combo: math.prod(g.values[i] for i in combo)
        for combo in itertools.product(support, repeat=int(k))
    }
    return CellwiseFunction(int(k), g.grid, coeffs, budget)


def _tensor_power_patterns(values, k, phi):
    """g^{⊗k} 的模式求值: k! · [x^k] ∏_i Σ_m g_i^m φ(i, m) x^m / m!"""
    batch = phi.shape[1:-1]
    poly = np.zeros((k + 1,) + batch)
    poly[0] = 1.0
    for i, value in enumerate(values):
        if value == 0.0:
            continue
        factor = np.stack(
            [value**m * phi[m, ..., i] / math.factorial(m) for m in range(k + 1)]
        )
        updated = np.zeros_like(poly)
        for d in range(k + 1):
            updated[d:] += poly[d] * factor[: k + 1 - d]
        poly = updated
    return math.factorial(k) * poly[k]


def evaluate_patterns(f, phi):
    """
    共享的重数模式求值器
    phi[m, ..., i] 为单元 i 上重数 m 的模式函数值 (phi[0] ≡ 1)，中间维度是副本维
    返回 Σ_τ c_τ ∏_{(A, m)} φ(A, m)，形状与副本维一致
    """
    if isinstance(f, TensorPowerFunction):
        return _tensor_power_patterns(f.base.values, f.power, phi)
    f = as_cellwise(f)
    batch = phi.shape[1:-1]
    if f.order == 0:
        return np.full(batch, f.constant_value) if batch else f.constant_value
    if f.max_multiplicity >= phi.shape[0]:
        raise DomainError(f"模式表只到重数 {phi.shape[0] - 1}，需要 {f.max_multiplicity}")
    total = np.zeros(batch)
    for cells, mults, coefficient in f.patterns:
        total = total + coefficient * phi[mults, ..., cells].prod(axis=0)
    return total if batch else float(total)


def harmonic_box_chaos(k_max=5):
    """h^{(k)} = k^{-1}·1_{[0,1]×[0,1/2]×…×[0,1/k]}，k = 1..k_max，h^{(0)} = 0"""
    if int(k_max) != k_max or k_max < 1:
        raise DomainError(f"k_max 必须 ≥ 1，得到 {k_max}")
    grid = Grid.from_edges([0.0] + [1.0 / j for j in range(1, k_max + 1)])
    components = [None]
    for k in range(1, k_max + 1):
        # 槽位 j 取所有右端点不超过 1/j 的单元
        slots = [
            [i for i, (_, b) in enumerate(grid.cells) if b <= 1.0 / j + 1e-15]
            for j in range(1, k + 1)
        ]
        coeffs = {combo: 1.0 / k for combo in itertools.product(*slots)}
        components.append(CellwiseFunction(k, grid, coeffs))
    return ChaosVector(tuple(components))


def support_within_window(h, schedule, n0):
    """检查 supp(h^{(k)}) ⊂ E_{n0}^k，返回 (是否满足, 说明)"""
    end = schedule.window_end(n0)
    offending = []
    for k, component in enumerate(h.components):
        if component is None or k == 0:
            continue
        cells = component.support_cells()
        if cells and component.grid.cells[max(cells)][1] > end:
            offending.append(k)
    if offending:
        return False, f"h^(k) 的支撑超出 E_{n0} = [0, {end:g}]: k = {offending}"
    return True, f"所有分量支撑都在 E_{n0} = [0, {end:g}] 内"


def grid_from_config(spec, path):
    try:
        return Grid(tuple(tuple(cell) for cell in spec))
    except (TypeError, ValidationError, DomainError) as e:
        raise ConfigError(path, str(e)) from e


def integrand_from_config(spec, path):
    """
    由已通过结构校验的 JSON 构造被积函数，下标为 1 起始
    这里只检查依赖网格的约束: 下标长度、范围与重复
    """
    if spec["type"] == "cellwise":
        order = int(spec["order"])
        grid = grid_from_config(spec["grid"], f"{path}.grid")
        coeffs = {}
        for i, entry in enumerate(spec.get("coeffs", [])):
            idx_path = f"{path}.coeffs[{i}].idx"
            idx = entry["idx"]
            if len(idx) != order:
                raise ConfigError(idx_path, f"下标需要长度为 {order} 的列表")
            if any(j > len(grid) for j in idx):
                raise ConfigError(idx_path, f"下标必须在 1..{len(grid)} 之间")
            key = tuple(j - 1 for j in idx)
            if key in coeffs:
                raise ConfigError(idx_path, f"重复下标 {idx}")
            coeffs[key] = float(entry["val"])
        if order == 0 and not coeffs and "value" in spec:
            coeffs[()] = float(spec["value"])
        try:
            return CellwiseFunction(order, grid, coeffs)
        except (ValidationError, BudgetExceededError) as e:
            raise ConfigError(path, str(e)) from e

    if spec["type"] == "tensor_power":
        base = spec["g"]
        grid = grid_from_config(base["grid"], f"{path}.g.grid")
        try:
            return TensorPowerFunction(StepFunction(grid, tuple(base["values"])), int(spec["k"]))
        except ValidationError as e:
            raise ConfigError(f"{path}.g.values", str(e)) from e

    raise ConfigError(f"{path}.type", f"未知被积函数类型 '{spec['type']}'")


def random_cellwise(order, grid, rng, nnz=4):
    """随机稀疏逐单元函数，下标可重复 (用于图公式检查矩阵)"""
    coeffs = {}
    for _ in range(nnz):
        key = tuple(int(i) for i in rng.integers(0, len(grid), size=order))
        coeffs[key] = float(rng.normal())
    return CellwiseFunction(order, grid, coeffs)
