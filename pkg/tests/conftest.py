import numpy as np
import pytest

from measure_model import ControlMeasure, TriangularArraySchedule, WindowRule


@pytest.fixture
def schedule():
    return TriangularArraySchedule.default()


@pytest.fixture
def weighted_schedule():
    """密度 2 on [0,5)、其后为 1，窗口 e(n) = n^{0.6}"""
    return TriangularArraySchedule(
        window=WindowRule("power", alpha=0.6),
        control=ControlMeasure((0.0, 5.0), (2.0, 1.0)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

