"""
错误类型模块
工具包内所有可预期的失败都从 ChaosToolError 派生，检查节点据此区分配置错误与检查失败
"""


class ChaosToolError(ValueError):
    """工具包基础异常"""


class DomainError(ChaosToolError):
    """参数超出定义域 (n < 1, 无界区间, 非法 l/p 等)"""


class ValidationError(ChaosToolError):
    """输入数据不满足不变量 (区间重叠, 密度为负等)"""


class GridMismatchError(ChaosToolError):
    """被积函数网格无法在目标网格上表示"""


class BudgetExceededError(ChaosToolError):
    """展开规模超过预算 (t^k 爆炸, 暴力枚举过大)"""


class ScheduleGridError(ChaosToolError):
    """网格单元在 P_n 下的总概率超过 1"""


class ConfigError(ChaosToolError):
    """实验配置错误，携带 JSON 路径与可选的行列号"""

    def __init__(self, path, message, line=None, column=None):
        self.path = path
        self.message = message
        self.line = line
        self.column = column
        super().__init__(self.describe())

    def describe(self):
        location = self.path or "<root>"
        if self.line is not None:
            location += f" (line {self.line}, column {self.column})"
        return f"{location}: {self.message}"
