"""
实验配置模块
单个 JSON 文档 → ExperimentConfig
结构约束由 JSON Schema 表达 (检查参数部分由各检查节点的 INPUT_TYPES 表生成)，
跨字段约束 (名称引用、严格递增、id 唯一、混沌分量阶数) 在解析时检查
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from errors import ChaosToolError, ConfigError
from integrands import ChaosVector, harmonic_box_chaos, integrand_from_config
from measure_model import TriangularArraySchedule

logger = logging.getLogger(__name__)

DEFAULT_K_RULE = (2.0, 0.5)
DEFAULT_OUTPUT_DIR = "out"
CHAOS_TYPES = ("chaos", "harmonic_box_chaos")


@dataclass
class CheckSpec:
    id: str
    type: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    schedule: TriangularArraySchedule = field(default_factory=TriangularArraySchedule.default)
    integrands: dict = field(default_factory=dict)
    chaos: dict = field(default_factory=dict)
    n_grid: tuple = (100, 10**4)
    replicates: int = 1000
    master_seed: int = 0
    k_rule: tuple = DEFAULT_K_RULE
    support_n0: int = 100
    checks: list = field(default_factory=list)
    output_dir: str = DEFAULT_OUTPUT_DIR


# ---------------------------------------------------------------------------
# JSON Schema
# ---------------------------------------------------------------------------

_NUMBERS = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_CELL_GRID = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
}
_CLOSED = {"not": {}}


def _object(properties, required=()):
    return {
        "type": "object",
        "properties": properties,
        "required": list(required),
        "additionalProperties": _CLOSED,
    }


def _when_type(value, then):
    return {"if": {"properties": {"type": {"const": value}}, "required": ["type"]}, "then": then}


INTEGRAND_SCHEMA = {
    "type": "object",
    "required": ["type"],
    "properties": {"type": {"enum": ["cellwise", "tensor_power", *CHAOS_TYPES]}},
    "allOf": [
        _when_type("cellwise", _object({
            "type": {},
            "order": {"type": "integer", "minimum": 0},
            "grid": _CELL_GRID,
            "coeffs": {"type": "array", "items": _object({
                "idx": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "val": {"type": "number"},
            }, required=("idx", "val"))},
            "value": {"type": "number"},
        }, required=("order", "grid"))),
        _when_type("tensor_power", _object({
            "type": {},
            "k": {"type": "integer", "minimum": 1},
            "g": _object({"grid": _CELL_GRID, "values": _NUMBERS}, required=("grid", "values")),
        }, required=("k", "g"))),
        _when_type("chaos", _object({
            "type": {},
            "components": {
                "type": "array",
                "minItems": 1,
                "items": {"anyOf": [{"type": ["null", "string"]}, {"$ref": "#/$defs/integrand"}]},
            },
        }, required=("components",))),
        _when_type("harmonic_box_chaos", _object({
            "type": {},
            "k_max": {"type": "integer", "minimum": 1},
        })),
    ],
}

SCHEDULE_SCHEMA = _object({
    "control_density": _object({
        "breakpoints": _NUMBERS,
        "values": {**_NUMBERS, "items": {"type": "number", "minimum": 0}},
    }),
    "window": _object({
        "rule": {"enum": ["power", "log", "table"]},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "values": {**_NUMBERS, "items": {"type": "number", "exclusiveMinimum": 0}},
    }, required=("rule",)),
})


def _param_schema(name, declaration):
    """INPUT_TYPES 中的一项 → JSON Schema；默认值为 None 的可选参数允许 null"""
    kind = declaration[0]
    options = declaration[1] if len(declaration) > 1 else {}
    if kind in ("INTEGRAND", "CHAOS"):
        schema = {"type": ["string"]}
    elif kind == "INT":
        schema = {"type": ["integer"]}
    elif kind == "FLOAT":
        schema = {"type": ["number"]}
    elif kind == "BOOLEAN":
        schema = {"type": ["boolean"]}
    elif kind == "INT_LIST":
        floor = 1 if name.startswith("n_") else 0
        schema = {"type": ["array"], "minItems": 1, "items": {"type": "integer", "minimum": floor}}
    elif kind == "INTERVALS":
        schema = {**_CELL_GRID, "type": ["array"]}
    else:
        raise ValueError(f"未知参数类型 {kind}")
    if "min" in options:
        schema["minimum"] = options["min"]
    if "max" in options:
        schema["maximum"] = options["max"]
    if "default" in options and options["default"] is None:
        schema["type"] = [*schema["type"], "null"]
    return schema


def _check_schema(mappings):
    branches = []
    for check_type, node_class in mappings.items():
        declared = node_class.INPUT_TYPES()
        required, optional = declared.get("required", {}), declared.get("optional", {})
        properties = {"id": {}, "type": {}}
        for name, declaration in {**required, **optional}.items():
            properties[name] = _param_schema(name, declaration)
        branches.append(_when_type(check_type, _object(properties, required=tuple(required))))
    return {
        "type": "object",
        "required": ["id", "type"],
        "properties": {
            "id": {"type": "string", "minLength": 1, "pattern": "^[^_]"},
            "type": {"enum": list(mappings)},
        },
        "allOf": branches,
    }


@lru_cache(maxsize=1)
def config_validator():
    """由检查注册表生成完整配置的校验器"""
    from check_nodes import CHECK_CLASS_MAPPINGS

    schema = {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$defs": {"integrand": INTEGRAND_SCHEMA},
        **_object({
            "schedule": SCHEDULE_SCHEMA,
            "integrands": {"type": "object", "additionalProperties": {"$ref": "#/$defs/integrand"}},
            "n_grid": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
            "replicates": {"type": "integer", "minimum": 2},
            "master_seed": {"type": "integer", "minimum": 0},
            "k_rule": _object({
                "c": {"type": "number", "exclusiveMinimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            }),
            "support_n0": {"type": "integer", "minimum": 1},
            "output_dir": {"type": "string"},
            "checks": {"type": "array", "items": _check_schema(CHECK_CLASS_MAPPINGS)},
        }),
    }
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


def json_path(parts):
    """("checks", 0, "f") → "checks[0].f" """
    text = ""
    for part in parts:
        text += f"[{part}]" if isinstance(part, int) else (f".{part}" if text else str(part))
    return text or "<root>"


_TYPE_NAMES = {
    "object": "对象", "array": "列表", "string": "字符串", "integer": "整数",
    "number": "数值", "boolean": "布尔值", "null": "null",
}


def _schema_error(error):
    """jsonschema 错误 → ConfigError (路径指向出错的键)"""
    parts = list(error.absolute_path)
    kind, expected = error.validator, error.validator_value
    if kind == "required":
        parts.append(next(name for name in expected if name not in error.instance))
        message = "缺少必需字段"
    elif kind == "not":
        message = "不接受此字段"
    elif kind == "type":
        names = [expected] if isinstance(expected, str) else expected
        message = "需要" + " 或 ".join(_TYPE_NAMES.get(n, n) for n in names)
    elif kind == "enum":
        message = f"可选值: {', '.join(map(str, expected))}"
    elif kind in ("minimum", "maximum", "exclusiveMinimum", "exclusiveMaximum"):
        symbol = {"minimum": "≥", "maximum": "≤", "exclusiveMinimum": ">", "exclusiveMaximum": "<"}[kind]
        message = f"需要 {symbol} {expected}"
    elif kind in ("minItems", "minLength"):
        message = "不能为空" if expected == 1 else f"至少需要 {expected} 项"
    elif kind == "maxItems":
        message = f"至多 {expected} 项"
    elif kind == "pattern":
        message = "不能以下划线开头"
    else:
        message = error.message
    return ConfigError(json_path(parts), message)


# ---------------------------------------------------------------------------
# 加载与解析
# ---------------------------------------------------------------------------


def load_config(path):
    """读取并解析 JSON 配置文件"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(str(path), f"无法读取配置: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<json>", e.msg, e.lineno, e.colno) from e
    return parse_config(data)


def _strictly_increasing(values, path):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(path, "必须严格递增")
    return tuple(int(v) for v in values)


def _parse_chaos(name, spec, resolved):
    path = f"integrands.{name}"
    if spec["type"] == "harmonic_box_chaos":
        return harmonic_box_chaos(spec.get("k_max", 5))

    parsed = []
    for k, component in enumerate(spec["components"]):
        component_path = f"{path}.components[{k}]"
        if component is None:
            parsed.append(None)
        elif isinstance(component, str):
            if component not in resolved:
                raise ConfigError(component_path, f"未定义的被积函数 '{component}'")
            parsed.append(resolved[component])
        else:
            parsed.append(integrand_from_config(component, component_path))
        if parsed[-1] is not None and parsed[-1].order != k:
            raise ConfigError(component_path, f"第 {k} 个分量的阶数应为 {k}，得到 {parsed[-1].order}")
    return ChaosVector(tuple(parsed))


def _parse_integrands(spec):
    integrands, chaos = {}, {}
    for name, entry in spec.items():
        if entry["type"] not in CHAOS_TYPES:
            integrands[name] = integrand_from_config(entry, f"integrands.{name}")
    for name, entry in spec.items():
        if entry["type"] in CHAOS_TYPES:
            chaos[name] = _parse_chaos(name, entry, integrands)
    return integrands, chaos


def _parse_checks(spec, config):
    from check_nodes import CHECK_CLASS_MAPPINGS

    checks, seen = [], set()
    for i, entry in enumerate(spec):
        path = f"checks[{i}]"
        check_id, check_type = entry["id"], entry["type"]
        if check_id in seen:
            raise ConfigError(f"{path}.id", f"检查 id '{check_id}' 重复")
        seen.add(check_id)
        declared = CHECK_CLASS_MAPPINGS[check_type].INPUT_TYPES()
        kinds = {name: d[0] for name, d in {**declared.get("required", {}), **declared.get("optional", {})}.items()}
        params = {}
        for name, value in entry.items():
            if name in ("id", "type"):
                continue
            param_path = f"{path}.{name}"
            if value is not None and kinds[name] == "INTEGRAND" and value not in config.integrands:
                raise ConfigError(param_path, f"未定义的被积函数 '{value}'")
            if value is not None and kinds[name] == "CHAOS" and value not in config.chaos:
                raise ConfigError(param_path, f"未定义的混沌向量 '{value}'")
            if value is not None and kinds[name] == "INT_LIST" and name.startswith("n_"):
                value = list(_strictly_increasing(value, param_path))
            if value is not None and kinds[name] == "INT":
                value = int(value)
            params[name] = value
        checks.append(CheckSpec(check_id, check_type, params))
    return checks


def parse_config(data):
    """把已解码的 JSON 对象转为 ExperimentConfig"""
    error = best_match(config_validator().iter_errors(data))
    if error is not None:
        raise _schema_error(error)

    try:
        schedule = TriangularArraySchedule.from_config(data.get("schedule"))
    except ChaosToolError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("schedule", str(e)) from e

    integrands, chaos = _parse_integrands(data.get("integrands", {}))
    n_grid = _strictly_increasing(data.get("n_grid", [100, 10**4]), "n_grid")
    k_rule = data.get("k_rule", {})

    config = ExperimentConfig(
        schedule=schedule,
        integrands=integrands,
        chaos=chaos,
        n_grid=n_grid,
        replicates=int(data.get("replicates", 1000)),
        master_seed=int(data.get("master_seed", 0)),
        k_rule=(float(k_rule.get("c", DEFAULT_K_RULE[0])), float(k_rule.get("epsilon", DEFAULT_K_RULE[1]))),
        support_n0=int(data.get("support_n0", n_grid[0])),
        output_dir=data.get("output_dir", DEFAULT_OUTPUT_DIR),
    )
    config.checks = _parse_checks(data.get("checks", []), config)
    logger.debug("✅ 配置已解析: %d 个被积函数, %d 个混沌向量, %d 项检查", len(integrands), len(chaos), len(config.checks))
    return config


def apply_overrides(config, seed=None, replicates=None, out_dir=None):
    """命令行全局参数覆盖配置值"""
    changes = {}
    if seed is not None:
        changes["master_seed"] = int(seed)
    if replicates is not None:
        if replicates < 2:
            raise ConfigError("--replicates", "需要 ≥ 2")
        changes["replicates"] = int(replicates)
    if out_dir is not None:
        changes["output_dir"] = str(out_dir)
    return dataclasses.replace(config, **changes)
