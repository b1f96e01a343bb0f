"""
Empirical Chaos Tools - 经验 Wiener 混沌模拟与验证工具包
提供三角阵列模型、逐单元被积函数、图公式组合、经验/高斯多重积分与蒙特卡洛检查
版本: 1.0.0
"""

import logging
import os
import sys

logger = logging.getLogger(__name__)

# ======================================================
# 初始化路径
# ======================================================
current_dir = os.path.dirname(os.path.abspath(__file__))
if current_dir not in sys.path:
    sys.path.append(current_dir)

# ======================================================
# 导入所有模块
# ======================================================
try:
    from . import check_nodes
    from .check_nodes import *
    from .chaos_cli import main
    from .errors import *
    from .experiment_config import load_config, parse_config
    from .harness import RunOptions, run_experiment

    # ======================================================
    # 合并检查映射
    # ======================================================
    CHECK_CLASS_MAPPINGS = {}
    CHECK_DISPLAY_NAME_MAPPINGS = {}

    for module in [check_nodes]:
        if hasattr(module, "CHECK_CLASS_MAPPINGS"):
            CHECK_CLASS_MAPPINGS.update(module.CHECK_CLASS_MAPPINGS)
        if hasattr(module, "CHECK_DISPLAY_NAME_MAPPINGS"):
            CHECK_DISPLAY_NAME_MAPPINGS.update(module.CHECK_DISPLAY_NAME_MAPPINGS)

    logger.debug("✅ Empirical Chaos Tools v1.0.0 已加载，%d 种检查", len(CHECK_CLASS_MAPPINGS))

# ======================================================
# 异常处理
# ======================================================
except ImportError as e:
    logger.warning("⚠️ Empirical Chaos Tools 部分模块导入失败: %s (请检查 requirements.txt 中的依赖)", e)
    CHECK_CLASS_MAPPINGS = {}
    CHECK_DISPLAY_NAME_MAPPINGS = {}

# ======================================================
# 模块元信息
# ======================================================
__version__ = "1.0.0"
__description__ = "Empirical Chaos Tools - 经验 Wiener 混沌的模拟、精确预言与蒙特卡洛验证"
