import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import BudgetExceededError, ConfigError, GridMismatchError, ValidationError
from integrands import (
    CellwiseFunction,
    ChaosVector,
    Grid,
    StepFunction,
    TensorPowerFunction,
    common_grid,
    evaluate_patterns,
    expand_tensor_power,
    h_norm,
    h_norm_terms,
    harmonic_box_chaos,
    integrand_from_config,
    integrate,
    l2_inner,
    norm,
    support_within_window,
    symmetrize,
    tensor,
)
from measure_model import TriangularArraySchedule

GRID = Grid(((0.0, 0.5), (0.5, 1.0), (1.0, 2.0)))


@st.composite
def cellwise_functions(draw, order=None, grid=GRID):
    k = draw(st.integers(min_value=1, max_value=3)) if order is None else order
    keys = draw(
        st.lists(
            st.tuples(*[st.integers(min_value=0, max_value=len(grid) - 1)] * k),
            min_size=1,
            max_size=6,
            unique=True,
        )
    )
    values = draw(
        st.lists(
            st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
            min_size=len(keys),
            max_size=len(keys),
        )
    )
    return CellwiseFunction(k, grid, dict(zip(keys, values)))


def test_grid_sorts_and_rejects_overlap():
    grid = Grid(((1.0, 2.0), (0.0, 1.0)))
    assert grid.cells == ((0.0, 1.0), (1.0, 2.0))
    with pytest.raises(ValidationError):
        Grid(((0.0, 1.5), (1.0, 2.0)))
    with pytest.raises(ValidationError):
        Grid(((1.0, 1.0),))


def test_grid_refine_and_subcells():
    coarse = Grid(((0.0, 1.0), (2.0, 3.0)))
    other = Grid(((0.5, 2.5),))
    fine = coarse.refine(other)
    assert fine.cells == ((0.0, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, 2.5), (2.5, 3.0))
    assert coarse.subcells(fine) == [[0, 1], [3, 4]]
    with pytest.raises(GridMismatchError):
        fine.subcells(coarse)


def test_grid_locate():
    idx = GRID.locate([0.1, 0.5, 1.99, 2.0, 5.0])
    assert idx.tolist() == [0, 1, 2, -1, -1]


def test_on_grid_preserves_integrals(schedule):
    f = CellwiseFunction(2, Grid(((0.0, 1.0), (1.0, 2.0))), {(0, 1): 2.0, (1, 1): -1.0})
    fine = Grid.from_edges([0.0, 0.25, 1.0, 1.5, 2.0])
    refined = f.on_grid(fine)
    assert refined.nnz == 2 * 2 + 2 * 2
    assert integrate(refined, "mu") == pytest.approx(integrate(f, "mu"), rel=1e-14)
    assert integrate(refined, "p_n", schedule, 16) == pytest.approx(
        integrate(f, "p_n", schedule, 16), rel=1e-14
    )


def test_symmetrize_averages_permutations():
    f = CellwiseFunction.indicator(GRID, 0, 1)
    sym = symmetrize(f)
    assert sym.coeffs == {(0, 1): 0.5, (1, 0): 0.5}


@settings(max_examples=60, deadline=None)
@given(cellwise_functions())
def test_symmetrize_is_idempotent_and_norm_reducing(f):
    sym = symmetrize(f)
    assert symmetrize(sym).allclose(sym, atol=1e-12)
    assert norm(sym) <= norm(f) * (1 + 1e-12) + 1e-12


@settings(max_examples=60, deadline=None)
@given(cellwise_functions(), cellwise_functions())
def test_inner_product_cauchy_schwarz(f, g):
    if f.order != g.order:
        return
    assert abs(l2_inner(f, g)) <= norm(f) * norm(g) * (1 + 1e-12) + 1e-12


def test_tensor_product_norm_factorises():
    f = CellwiseFunction(1, GRID, {(0,): 1.0, (2,): -2.0})
    g = CellwiseFunction(1, GRID, {(1,): 3.0})
    product = tensor(f, g)
    assert product.order == 2
    assert norm(product) == pytest.approx(norm(f) * norm(g), rel=1e-14)


def test_tensor_power_closed_forms_match_expansion(schedule):
    base = StepFunction(GRID, (1.0, -0.5, 2.0))
    power = TensorPowerFunction(base, 3)
    expanded = expand_tensor_power(base, 3)
    assert expanded.nnz == 27
    assert l2_inner(power, power) == pytest.approx(l2_inner(expanded, expanded), rel=1e-12)
    assert integrate(power, "p_n", schedule, 9) == pytest.approx(
        integrate(expanded, "p_n", schedule, 9), rel=1e-12
    )


def test_expand_tensor_power_budget():
    base = StepFunction(Grid.from_edges(np.linspace(0.0, 1.0, 11)), (1.0,) * 10)
    with pytest.raises(BudgetExceededError):
        expand_tensor_power(base, 7, budget=10**6)


def test_tensor_power_pattern_fast_path_matches_expansion(rng):
    base = StepFunction(GRID, (0.7, -1.2, 0.4))
    phi = rng.normal(size=(5, 8, len(GRID)))
    phi[0] = 1.0
    for k in (1, 2, 3, 4):
        fast = evaluate_patterns(TensorPowerFunction(base, k), phi)
        slow = evaluate_patterns(expand_tensor_power(base, k), phi)
        np.testing.assert_allclose(fast, slow, rtol=1e-10, atol=1e-12)


def test_evaluate_patterns_groups_by_multiset():
    f = CellwiseFunction(2, GRID, {(0, 1): 2.0, (1, 0): 3.0, (2, 2): -1.0})
    phi = np.array([[1.0, 1.0, 1.0], [2.0, 3.0, 5.0], [7.0, 11.0, 13.0]])
    # (0,1) 与 (1,0) 同属模式 {A_1, A_2}: (2+3)·2·3；(2,2) 为重数 2: −13
    assert evaluate_patterns(f, phi) == pytest.approx(5.0 * 6.0 - 13.0)


def test_h_norm_of_harmonic_box_chaos():
    h = harmonic_box_chaos(5)
    terms = h_norm_terms(h)
    assert terms[0] == 0.0
    for k in range(1, 6):
        box = math.prod(1.0 / j for j in range(1, k + 1))
        # 对称化后范数平方 ≤ 原函数范数平方 box/k²
        assert 0.0 < terms[k] <= math.factorial(k) * box / k**2 * (1 + 1e-12)
    assert terms[1] == pytest.approx(1.0)
    assert h_norm(h) == pytest.approx(math.sqrt(sum(terms)))


def test_harmonic_box_chaos_support(schedule):
    h = harmonic_box_chaos(5)
    assert h.grid.right_end == 1.0
    ok, _ = support_within_window(h, schedule, 4)
    assert ok
    ok, detail = support_within_window(h, TriangularArraySchedule(), 1)
    assert ok
    wide = ChaosVector((None, CellwiseFunction.indicator(Grid(((0.0, 5.0),)), 0)))
    ok, detail = support_within_window(wide, schedule, 4)
    assert not ok and "k = [1]" in detail


def test_chaos_vector_rejects_wrong_order():
    with pytest.raises(ValidationError):
        ChaosVector((None, CellwiseFunction.indicator(GRID, 0, 1)))


def test_common_grid_refines_all():
    grid = common_grid(Grid(((0.0, 1.0),)), Grid(((0.5, 2.0),)), None)
    assert grid.cells == ((0.0, 0.5), (0.5, 1.0), (1.0, 2.0))


def test_integrand_from_config_cellwise():
    spec = {
        "type": "cellwise",
        "order": 2,
        "grid": [[0, 1], [1, 2]],
        "coeffs": [{"idx": [1, 2], "val": 1.5}],
    }
    f = integrand_from_config(spec, "integrands.f")
    assert f.coeffs == {(0, 1): 1.5}


def test_integrand_from_config_reports_path():
    spec = {"type": "cellwise", "order": 2, "grid": [[0, 1]], "coeffs": [{"idx": [1, 3], "val": 1}]}
    with pytest.raises(ConfigError) as excinfo:
        integrand_from_config(spec, "integrands.f1")
    assert excinfo.value.path == "integrands.f1.coeffs[0].idx"


def test_integrand_from_config_tensor_power():
    spec = {"type": "tensor_power", "k": 3, "g": {"grid": [[0, 1], [1, 2]], "values": [1.0, 2.0]}}
    f = integrand_from_config(spec, "integrands.g")
    assert isinstance(f, TensorPowerFunction)
    assert integrate(f, "mu") == pytest.approx(27.0)
