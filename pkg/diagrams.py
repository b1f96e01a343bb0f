"""
图计算模块
两行顶点之间的 (着色) 图、收缩、平均收缩、计数公式、B_{n,k} 系数、双线性型 F_l^{(n)} 与精确均值
计数全部使用整数精确运算，只在最后的测度求值处转为浮点
"""

import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from sympy.utilities.iterables import partitions

from errors import DomainError
from integrands import CellwiseFunction, align, as_cellwise, cell_masses, integrate, tensor
from measure_model import TriangularArraySchedule

logger = logging.getLogger(__name__)

# 精确整数累加 B_{n,k} 时允许的最大阶数
B_COEFF_MAX_ORDER = 20


@dataclass(frozen=True)
class Diagram:
    """第一行 k1 个顶点、第二行 k2 个顶点之间的部分匹配，边 (j, j′) 按 j 排序，1 起始编号"""

    k1: int
    k2: int
    edges: tuple = ()

    def __post_init__(self):
        used = set()
        for j, j_prime in self.edges:
            if not (1 <= j <= self.k1 and self.k1 + 1 <= j_prime <= self.k1 + self.k2):
                raise DomainError(f"边 ({j}, {j_prime}) 超出顶点范围")
            if j in used or j_prime in used:
                raise DomainError(f"顶点重复出现在多条边中: ({j}, {j_prime})")
            used.update((j, j_prime))
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))

    @property
    def l(self):
        return len(self.edges)


@dataclass(frozen=True)
class ColoredDiagram:
    """着色图: colored ⊆ edges 中的边所识别的变量会被积掉"""

    diagram: Diagram
    colored: tuple = ()

    def __post_init__(self):
        colored = tuple(sorted(self.colored))
        if not set(colored) <= set(self.diagram.edges):
            raise DomainError("着色边必须是图的边")
        object.__setattr__(self, "colored", colored)

    @property
    def l(self):
        return self.diagram.l

    @property
    def p(self):
        return len(self.colored)


def _check_range(k1, k2, l, p=None):
    if min(k1, k2) < 0:
        raise DomainError(f"行大小必须非负: ({k1}, {k2})")
    if not 0 <= l <= min(k1, k2):
        raise DomainError(f"l = {l} 超出范围 [0, {min(k1, k2)}]")
    if p is not None and not 0 <= p <= l:
        raise DomainError(f"p = {p} 超出范围 [0, {l}]")


def diagram_count(k1, k2, l, p=None):
    """|𝓑(l)| = k1!k2!/((k1−l)!(k2−l)!l!)，着色时 |𝓑(l,p)| = k1!k2!/((k1−l)!(k2−l)!(l−p)!p!)"""
    _check_range(k1, k2, l, p)
    base = math.factorial(k1) * math.factorial(k2) // (
        math.factorial(k1 - l) * math.factorial(k2 - l)
    )
    if p is None:
        return base // math.factorial(l)
    return base // (math.factorial(l - p) * math.factorial(p))


@lru_cache(maxsize=None)
def _diagrams(k1, k2, l):
    result = []
    for first_row in itertools.combinations(range(1, k1 + 1), l):
        for second_row in itertools.permutations(range(k1 + 1, k1 + k2 + 1), l):
            result.append(Diagram(k1, k2, tuple(zip(first_row, second_row))))
    return tuple(result)


@lru_cache(maxsize=None)
def _colored_diagrams(k1, k2, l, p):
    return tuple(
        ColoredDiagram(diagram, colored)
        for diagram in _diagrams(k1, k2, l)
        for colored in itertools.combinations(diagram.edges, p)
    )


def enumerate_diagrams(k1, k2, l, p=None):
    """枚举 𝓑(l) 或 𝓑(l,p)，返回 (图列表, 个数)；结果按 (k1, k2, l, p) 缓存"""
    _check_range(k1, k2, l, p)
    found = _diagrams(k1, k2, l) if p is None else _colored_diagrams(k1, k2, l, p)
    return found, len(found)


def contract(f, g, diagram):
    """
    (f⊗g)_{B(N)}: 按边识别 x_j = x_{j′}
    输出变量为 f 的全部槽位，再接 g 中未匹配的槽位；不同单元被识别时乘积为 0
    """
    f, g = align(as_cellwise(f), as_cellwise(g))
    if (f.order, g.order) != (diagram.k1, diagram.k2):
        raise DomainError(
            f"图的行大小 ({diagram.k1}, {diagram.k2}) 与阶数 ({f.order}, {g.order}) 不符"
        )
    if diagram.l == 0:
        return tensor(f, g)

    matched_f = [j - 1 for j, _ in diagram.edges]
    matched_g = [j_prime - diagram.k1 - 1 for _, j_prime in diagram.edges]
    free_g = [s for s in range(g.order) if s not in set(matched_g)]

    by_projection = defaultdict(list)
    for key, value in g.coeffs.items():
        by_projection[tuple(key[s] for s in matched_g)].append(
            (tuple(key[s] for s in free_g), value)
        )

    coeffs = {}
    for key, value in f.coeffs.items():
        for rest, g_value in by_projection.get(tuple(key[s] for s in matched_f), ()):
            coeffs[key + rest] = value * g_value
    return CellwiseFunction(f.order + len(free_g), f.grid, coeffs)


def contract_integrated(f, g, colored_diagram, measure="p_n", schedule=None, n=None):
    """(f⊗g)_{B(N,N₁)}: 在收缩基础上，把着色边识别出的变量对测度积掉"""
    contracted = contract(f, g, colored_diagram.diagram)
    if colored_diagram.p == 0:
        return contracted
    masses = cell_masses(contracted.grid, measure, schedule, n)
    integrated_slots = {j - 1 for j, _ in colored_diagram.colored}
    kept = [s for s in range(contracted.order) if s not in integrated_slots]

    coeffs = defaultdict(float)
    for key, value in contracted.coeffs.items():
        weight = math.prod(masses[key[s]] for s in integrated_slots)
        coeffs[tuple(key[s] for s in kept)] += value * weight
    return CellwiseFunction(len(kept), contracted.grid, coeffs)


def averaged_contraction(f, g, l, p, n, schedule=None):
    """𝓑(l,p) 上对 P_n 着色收缩的平均；l = 0 时即 f⊗g"""
    _check_range(f.order, g.order, l, p)
    if l == 0:
        return tensor(f, g)
    f, g = align(as_cellwise(f), as_cellwise(g))
    diagrams, count = enumerate_diagrams(f.order, g.order, l, p)

    total = defaultdict(float)
    for colored in diagrams:
        term = contract_integrated(f, g, colored, "p_n", schedule, n)
        for key, value in term.coeffs.items():
            total[key] += value
    return CellwiseFunction(
        f.order + g.order - l - p, f.grid, {key: value / count for key, value in total.items()}
    )


def set_partition_count(*sizes):
    """把 k = Σr_j 元集合划分为大小 r_1,…,r_s 的块的方式数: k!/(∏r_j! ∏m_t!)"""
    if not sizes or any(int(r) != r or r < 1 for r in sizes):
        raise DomainError(f"块大小必须为正整数: {sizes}")
    k = sum(sizes)
    multiplicities = defaultdict(int)
    for r in sizes:
        multiplicities[r] += 1
    denominator = math.prod(math.factorial(r) for r in sizes) * math.prod(
        math.factorial(m) for m in multiplicities.values()
    )
    return math.factorial(k) // denominator


def b_coeff_numerator(n, k):
    """k!·n^{k/2}·B_{n,k} 的精确整数值"""
    if k == 0:
        return 1
    total = 0
    for partition in partitions(k):
        blocks = dict(partition)
        if 1 in blocks:
            continue
        s = sum(blocks.values())
        sizes = [r for r, m in blocks.items() for _ in range(m)]
        weight = math.prod((r - 1) for r in sizes) * set_partition_count(*sizes)
        total += (-1) ** (k - s) * math.perm(n, s) * weight
    return total


def b_coeff(n, k):
    """B_{n,k}: 在所有块大小 ≥ 2 的集合划分上精确累加，再除以 k!·n^{k/2}"""
    if int(n) != n or n < 1:
        raise DomainError(f"n 必须为正整数，得到 {n}")
    if int(k) != k or k < 0:
        raise DomainError(f"k 必须为非负整数，得到 {k}")
    if k > B_COEFF_MAX_ORDER:
        raise DomainError(f"k = {k} 超过精确累加上限 {B_COEFF_MAX_ORDER}")
    if k == 0:
        return 1.0
    n, k = int(n), int(k)
    ratio = Fraction(b_coeff_numerator(n, k), math.factorial(k) * n ** (k // 2))
    if k % 2:
        return float(ratio) / math.sqrt(n)
    return float(ratio)


def f_bilinear(f, g, l, n, schedule=None, p=None):
    """F_l^{(n)}(f,g) = (n/a_n)^{(k1+k2)/2}·P_n^{k1+k2−l−p}(𝓑(l,p) 平均收缩)，默认 p = l"""
    schedule = schedule or TriangularArraySchedule.default()
    p = l if p is None else p
    averaged = averaged_contraction(f, g, l, p, n, schedule)
    scale = schedule.scale(n) ** ((f.order + g.order) / 2)
    return scale * integrate(averaged, "p_n", schedule, n)


def exact_mean(f, k, n, schedule=None):
    """E I_k^{(n)}(f) = k!·B_{n,k}·(n/a_n)^{k/2}·P_n^k(f)"""
    if f.order != k:
        raise DomainError(f"阶数不符: f 为 {f.order} 阶，请求 k = {k}")
    schedule = schedule or TriangularArraySchedule.default()
    if k == 0:
        return as_cellwise(f).constant_value
    return (
        math.factorial(k)
        * b_coeff(n, k)
        * schedule.scale(n) ** (k / 2)
        * integrate(f, "p_n", schedule, n)
    )


@dataclass(frozen=True)
class DiagramTerm:
    """乘积公式中的一项: coefficient·count·I_{k1+k2−l−p}^{(n)}(contraction)"""

    l: int
    p: int
    count: int
    coefficient: float
    contraction: CellwiseFunction


def diagram_expansion(f, g, n, schedule=None):
    """I(f)I(g) = Σ_{l,p} (n/a_n)^{(l+p)/2}·|𝓑(l,p)|·n^{−(l−p)/2}·I(平均收缩) 的逐项列表"""
    schedule = schedule or TriangularArraySchedule.default()
    scale = schedule.scale(n)
    terms = []
    for l in range(min(f.order, g.order) + 1):
        for p in range(l + 1):
            coefficient = scale ** ((l + p) / 2) * n ** (-(l - p) / 2)
            terms.append(
                DiagramTerm(
                    l,
                    p,
                    diagram_count(f.order, g.order, l, p),
                    coefficient,
                    averaged_contraction(f, g, l, p, n, schedule),
                )
            )
    return terms


def exact_cross_moment(f, g, n, schedule=None):
    """E[I_{k1}^{(n)}(f)·I_{k2}^{(n)}(g)]: 对乘积公式逐项取期望"""
    schedule = schedule or TriangularArraySchedule.default()
    return math.fsum(
        term.coefficient
        * term.count
        * exact_mean(term.contraction, term.contraction.order, n, schedule)
        for term in diagram_expansion(f, g, n, schedule)
    )
