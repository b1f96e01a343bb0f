"""
测度模型模块
半直线 [0,∞) 上的分段常数密度控制测度 μ，以及三角阵列窗口调度 (E_n, a_n, P_n, μ_n)
所有测度计算均为闭式，不涉及数值积分
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError, DomainError, ValidationError

logger = logging.getLogger(__name__)

# 调度校验时用于检查 μ_n ≤ μ_{n+1} ≤ μ 的固定探针区间族
REFERENCE_INTERVALS = ((0.0, 1.0), (0.5, 2.0), (1.0, 3.0), (2.0, 10.0), (0.0, 100.0))

RELATIVE_TOLERANCE = 1e-12


def normalize_cells(cells):
    """整理区间列表: 转为按左端点排序的 (a, b) 元组，并检查有界、非负、互不相交"""
    if len(cells) == 2 and np.isscalar(cells[0]) and np.isscalar(cells[1]):
        cells = [cells]

    normalized = []
    for cell in cells:
        a, b = float(cell[0]), float(cell[1])
        if not (math.isfinite(a) and math.isfinite(b)):
            raise DomainError(f"无界区间 [{a}, {b}]")
        if a < 0.0 or b < a:
            raise ValidationError(f"非法区间 [{a}, {b}]: 需要 0 ≤ a ≤ b")
        normalized.append((a, b))

    normalized.sort()
    for (a0, b0), (a1, b1) in zip(normalized, normalized[1:]):
        if a1 < b0:
            raise ValidationError(f"区间重叠: [{a0}, {b0}] 与 [{a1}, {b1}]")
    return tuple(normalized)


@dataclass(frozen=True)
class ControlMeasure:
    """控制测度 μ: [0,∞) 上的分段常数密度，values[i] 作用于 [breakpoints[i], breakpoints[i+1])"""

    breakpoints: tuple = (0.0,)
    values: tuple = (1.0,)
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        breakpoints = tuple(float(x) for x in self.breakpoints)
        values = tuple(float(v) for v in self.values)

        if not breakpoints or len(breakpoints) != len(values):
            raise ValidationError("密度断点与取值数量必须一致且非空")
        if breakpoints[0] != 0.0:
            raise ValidationError("第一个断点必须为 0")
        if any(b1 <= b0 for b0, b1 in zip(breakpoints, breakpoints[1:])):
            raise ValidationError("密度断点必须严格递增")
        if any(not math.isfinite(v) or v < 0.0 for v in values):
            raise ValidationError("密度取值必须为有限非负数")
        if values[-1] <= 0.0:
            # 最后一段为 0 会导致 μ([0,∞)) < ∞
            raise ValidationError("最后一段密度必须严格为正，以保证 μ([0,∞)) = ∞")

        widths = np.diff(np.asarray(breakpoints))
        cumulative = np.concatenate([[0.0], np.cumsum(np.asarray(values[:-1]) * widths)])
        object.__setattr__(self, "breakpoints", breakpoints)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_cumulative", cumulative)

    @classmethod
    def from_config(cls, spec, path="schedule.control_density"):
        if spec is None:
            return cls()
        if not isinstance(spec, dict):
            raise ConfigError(path, "需要对象 {breakpoints, values}")
        try:
            return cls(tuple(spec.get("breakpoints", (0.0,))), tuple(spec.get("values", (1.0,))))
        except (TypeError, ValidationError) as e:
            raise ConfigError(path, str(e)) from e

    def to_config(self):
        return {"breakpoints": list(self.breakpoints), "values": list(self.values)}

    def cdf(self, x):
        """μ([0, x])，x 可为数组"""
        x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
        bp = np.asarray(self.breakpoints)
        idx = np.searchsorted(bp, x, side="right") - 1
        values = np.asarray(self.values)
        result = self._cumulative[idx] + values[idx] * (x - bp[idx])
        return float(result) if result.ndim == 0 else result

    def mass(self, a, b):
        """μ([a, b])"""
        return self.cdf(b) - self.cdf(a)

    def inverse_cdf(self, u):
        """μ 的广义逆: 返回 x 使 μ([0, x]) = u，u 可为数组"""
        u = np.asarray(u, dtype=np.float64)
        idx = np.searchsorted(self._cumulative, u, side="right") - 1
        bp = np.asarray(self.breakpoints)
        values = np.asarray(self.values)
        return bp[idx] + (u - self._cumulative[idx]) / values[idx]

    def describe(self):
        if self.breakpoints == (0.0,) and self.values == (1.0,):
            return "λ (Lebesgue)"
        pieces = ", ".join(f"{v:g}@{b:g}" for b, v in zip(self.breakpoints, self.values))
        return f"density[{pieces}]"


@dataclass(frozen=True)
class WindowRule:
    """窗口右端点 e(n) 的命名规则: power (n^α), log (ln(1+n)), table (显式列表)"""

    rule: str = "power"
    alpha: float = 0.5
    table: tuple = ()

    RULES = ("power", "log", "table")

    def __post_init__(self):
        if self.rule not in self.RULES:
            raise ValidationError(f"未知窗口规则 '{self.rule}'，可选: {', '.join(self.RULES)}")
        if self.rule == "power" and not (math.isfinite(self.alpha) and self.alpha > 0.0):
            raise ValidationError("power 规则需要 alpha > 0")
        if self.rule == "table":
            table = tuple(float(v) for v in self.table)
            if not table or any(not (math.isfinite(v) and v > 0.0) for v in table):
                raise ValidationError("table 规则需要非空的正数列表")
            object.__setattr__(self, "table", table)

    @classmethod
    def from_config(cls, spec, path="schedule.window"):
        if spec is None:
            return cls()
        if not isinstance(spec, dict) or "rule" not in spec:
            raise ConfigError(path, "需要对象 {rule, ...}")
        try:
            if spec["rule"] == "power":
                return cls("power", alpha=float(spec.get("alpha", 0.5)))
            if spec["rule"] == "table":
                return cls("table", table=tuple(spec.get("values", ())))
            return cls(spec["rule"])
        except (TypeError, ValueError) as e:
            raise ConfigError(path, str(e)) from e

    def to_config(self):
        if self.rule == "power":
            return {"rule": "power", "alpha": self.alpha}
        if self.rule == "table":
            return {"rule": "table", "values": list(self.table)}
        return {"rule": self.rule}

    def right_endpoint(self, n):
        if self.rule == "power":
            if self.alpha == 0.5:
                return math.sqrt(n)
            return float(n) ** self.alpha
        if self.rule == "log":
            return math.log1p(n)
        if n > len(self.table):
            raise DomainError(f"table 窗口只定义到 n = {len(self.table)}，请求 n = {n}")
        return self.table[n - 1]

    def describe(self):
        if self.rule == "power":
            return f"e(n) = n^{self.alpha:g}"
        if self.rule == "log":
            return "e(n) = ln(1+n)"
        return f"e(n) = table[{len(self.table)}]"


@dataclass
class ValidationReport:
    """调度校验报告: 每项检查的通过状态与说明"""

    n_grid: tuple
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(ok for ok, _ in self.checks.values())

    @property
    def failures(self):
        return [name for name, (ok, _) in self.checks.items() if not ok]

    def record(self, name, ok, detail=""):
        self.checks[name] = (bool(ok), detail)

    def format(self):
        lines = [f"=== 调度校验报告 (n_grid = {list(self.n_grid)}) ==="]
        for name, (ok, detail) in self.checks.items():
            mark = "✅" if ok else "❌"
            lines.append(f"{mark} {name}" + (f": {detail}" if detail else ""))
        for note in self.notes:
            lines.append(f"ℹ️ {note}")
        lines.append("🎉 校验通过" if self.passed else f"⚠️ 校验失败: {', '.join(self.failures)}")
        return "\n".join(lines)


@dataclass(frozen=True)
class TriangularArraySchedule:
    """三角阵列调度: E_n = [0, e(n)], a_n = n/μ(E_n), P_n = μ(·∩E_n)/μ(E_n), μ_n = μ(·∩E_n)"""

    window: WindowRule = field(default_factory=WindowRule)
    control: ControlMeasure = field(default_factory=ControlMeasure)

    @classmethod
    def default(cls):
        """λ 与 E_n = [0, √n]，此时 a_n = √n"""
        return cls()

    @classmethod
    def from_config(cls, spec, path="schedule"):
        if spec is None:
            return cls()
        if not isinstance(spec, dict):
            raise ConfigError(path, "需要对象 {control_density, window}")
        control = ControlMeasure.from_config(spec.get("control_density"), f"{path}.control_density")
        window = WindowRule.from_config(spec.get("window"), f"{path}.window")
        return cls(window=window, control=control)

    def to_config(self):
        return {"control_density": self.control.to_config(), "window": self.window.to_config()}

    def describe(self):
        return f"μ = {self.control.describe()}, {self.window.describe()}"

    @staticmethod
    def _check_n(n):
        if int(n) != n or n < 1:
            raise DomainError(f"样本量 n 必须为正整数，得到 {n}")
        return int(n)

    def window_end(self, n):
        return self.window.right_endpoint(self._check_n(n))

    def window_mass(self, n):
        """μ(E_n)"""
        mass = self.control.mass(0.0, self.window_end(n))
        if mass <= 0.0:
            raise DomainError(f"μ(E_{n}) = 0，窗口不含正质量")
        return mass

    def a_n(self, n):
        return self._check_n(n) / self.window_mass(n)

    def scale(self, n):
        """n / a_n = μ(E_n)"""
        return self.window_mass(n)

    def mu_mass(self, cells):
        return mu_mass(cells, self.control)

    def mu_n_mass(self, cells, n):
        """μ_n(B) = (n/a_n) P_n(B) = μ(B ∩ E_n)"""
        end = self.window_end(n)
        total = 0.0
        for a, b in normalize_cells(cells):
            if a < end:
                total += self.control.mass(a, min(b, end))
        return total

    def p_n(self, cells, n):
        """P_n(B) = μ(B ∩ E_n) / μ(E_n)"""
        return self.mu_n_mass(cells, n) / self.window_mass(n)

    def cell_masses(self, cells, n=None, kind="mu"):
        """逐单元质量向量: kind ∈ {mu, mu_n, p_n}，单元须已互不相交"""
        lefts = np.array([c[0] for c in cells], dtype=np.float64)
        rights = np.array([c[1] for c in cells], dtype=np.float64)
        if kind == "mu":
            return self.control.mass(lefts, rights) if len(cells) else np.zeros(0)
        end = self.window_end(n)
        clipped = np.minimum(rights, end)
        masses = np.where(lefts < end, self.control.mass(lefts, np.maximum(clipped, lefts)), 0.0)
        if kind == "mu_n":
            return masses
        if kind == "p_n":
            return masses / self.window_mass(n)
        raise DomainError(f"未知测度类型 '{kind}'")

    def validate(self, n_grid):
        return validate_schedule(self, n_grid)


def mu_mass(cells, control=None):
    """μ(∪ cells)，区间须互不相交且有界"""
    control = control or ControlMeasure()
    return sum(control.mass(a, b) for a, b in normalize_cells(cells))


def _strictly_monotone(values, increasing=True):
    pairs = zip(values, values[1:])
    return all((b > a) if increasing else (b < a) for a, b in pairs)


def validate_schedule(schedule, n_grid):
    """在有限 n 网格上检查三角阵列模型的可验证条件，失败写入报告而不抛出"""
    grid = tuple(int(n) for n in n_grid)
    report = ValidationReport(n_grid=grid)
    report.notes.append("a_n → ∞ 与 a_n = o(n) 为渐近性质，此处以网格上的单调趋势代替")

    if not grid or any(n < 1 for n in grid) or not _strictly_monotone(grid):
        report.record("n_grid", False, "n_grid 必须非空、为正整数且严格递增")
        return report

    # 嵌套性: e(n) ≤ e(n+1)，以及相邻网格点之间
    pairs = {(n, n + 1) for n in grid} | set(zip(grid, grid[1:]))
    if schedule.window.rule == "table":
        upper = min(grid[-1], len(schedule.window.table) - 1)
        pairs |= {(n, n + 1) for n in range(grid[0], upper + 1)}
    bad_pairs = []
    for n0, n1 in sorted(pairs):
        try:
            if schedule.window_end(n0) > schedule.window_end(n1):
                bad_pairs.append((n0, n1))
        except DomainError:
            continue
    report.record(
        "nestedness",
        not bad_pairs,
        "" if not bad_pairs else f"e(n) 在 {bad_pairs[:3]} 处递减",
    )

    try:
        masses = [schedule.window_mass(n) for n in grid]
    except DomainError as e:
        report.record("window mass positive", False, str(e))
        return report
    report.record("window mass positive", all(m > 0.0 for m in masses))

    a_values = [n / m for n, m in zip(grid, masses)]
    report.record(
        "a_n increasing",
        _strictly_monotone(a_values, increasing=True),
        "a_n = " + ", ".join(f"{a:.4g}" for a in a_values),
    )
    ratios = [a / n for a, n in zip(a_values, grid)]
    report.record(
        "a_n/n decreasing",
        _strictly_monotone(ratios, increasing=False),
        "a_n/n = " + ", ".join(f"{r:.4g}" for r in ratios),
    )

    violations = []
    for interval in REFERENCE_INTERVALS:
        full = schedule.mu_mass([interval])
        for n in grid:
            current = schedule.mu_n_mass([interval], n)
            try:
                following = schedule.mu_n_mass([interval], n + 1)
            except DomainError:
                following = None
            slack = RELATIVE_TOLERANCE * max(1.0, full)
            if following is not None and current > following + slack:
                violations.append(f"μ_{n}({interval}) > μ_{n + 1}")
            if max(current, following or 0.0) > full + slack:
                violations.append(f"μ_n({interval}) > μ at n = {n}")
    report.record("mu_n monotone", not violations, "; ".join(violations[:3]))

    if report.passed:
        logger.debug("✅ 调度校验通过: %s", schedule.describe())
    else:
        logger.warning("⚠️ 调度校验失败 (%s): %s", schedule.describe(), ", ".join(report.failures))
    return report
