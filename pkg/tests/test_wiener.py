import math

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from errors import DomainError
from integrands import (
    CellwiseFunction,
    Grid,
    StepFunction,
    TensorPowerFunction,
    evaluate_patterns,
    h_norm,
    harmonic_box_chaos,
    l2_inner,
    random_cellwise,
    symmetrize,
)
from mc_stats import estimate_mean
from measure_model import ControlMeasure
from replicates import replicate_rngs
from wiener import (
    GaussianCellRealization,
    chaos_series,
    hermite,
    limit_second_moment,
    sample_gaussian_cells,
    sample_gaussian_cells_batch,
    wiener_integral,
    wiener_pattern_table,
)

GRID = Grid(((0.0, 0.5), (0.5, 1.0), (1.0, 2.0)))


def test_hermite_low_orders():
    x = 1.7
    assert hermite(0, x) == 1.0
    assert hermite(1, x) == pytest.approx(x)
    assert hermite(2, x) == pytest.approx(x**2 - 1)
    assert hermite(3, x) == pytest.approx(x**3 - 3 * x)
    with pytest.raises(DomainError):
        hermite(-1, x)


def test_pattern_table_hermite_form():
    realization = GaussianCellRealization(GRID, np.array([0.3, -0.2, 1.1]), np.array([0.5, 0.5, 1.0]))
    table = wiener_pattern_table(realization, 3)
    w, mu = 0.3, 0.5
    assert table[0, 0] == 1.0
    assert table[2, 0] == pytest.approx(w**2 - mu)
    assert table[3, 0] == pytest.approx(w**3 - 3 * mu * w)


def test_pattern_table_zero_mass_cell():
    realization = GaussianCellRealization(GRID, np.array([0.0, 0.4, 0.0]), np.array([0.0, 0.5, 0.0]))
    table = wiener_pattern_table(realization, 2)
    assert table[0].tolist() == [1.0, 1.0, 1.0]
    assert table[1, 0] == 0.0 and table[2, 2] == 0.0


def test_gaussian_cells_have_control_variances(rng):
    control = ControlMeasure((0.0, 1.0), (3.0, 1.0))
    batch = sample_gaussian_cells_batch(GRID, replicate_rngs(1, 0, 20000, "gaussian"), control)
    np.testing.assert_allclose(batch.masses, [1.5, 1.5, 1.0])
    variances = batch.values.var(axis=0)
    np.testing.assert_allclose(variances, batch.masses, rtol=0.05)
    single = sample_gaussian_cells(GRID, rng, control)
    assert single.replicates == 1 and single.values.shape == (3,)


def test_simple_function_integral_is_product_of_gaussians():
    realization = GaussianCellRealization(GRID, np.array([0.3, -0.2, 1.1]), np.array([0.5, 0.5, 1.0]))
    f = CellwiseFunction(2, GRID, {(0, 2): 2.0, (1, 0): -1.0})
    assert wiener_integral(f, realization) == pytest.approx(2.0 * 0.3 * 1.1 - (-0.2) * 0.3)


def test_tensor_power_integral_is_hermite_of_first_chaos():
    base = StepFunction(GRID, (1.0, -2.0, 0.5))
    realization = GaussianCellRealization(GRID, np.array([0.3, -0.2, 1.1]), np.array([0.5, 0.5, 1.0]))
    first = wiener_integral(base.as_cellwise(), realization)
    sigma2 = l2_inner(base.as_cellwise(), base.as_cellwise())
    sigma = math.sqrt(sigma2)
    for k in (1, 2, 3, 4):
        expected = sigma**k * hermite(k, first / sigma)
        assert wiener_integral(TensorPowerFunction(base, k), realization) == pytest.approx(expected, rel=1e-10)


def test_isometry_and_orthogonality_monte_carlo():
    f = CellwiseFunction(2, GRID, {(0, 1): 1.0, (2, 2): 0.5, (1, 2): -1.0})
    g = CellwiseFunction(1, GRID, {(0,): 1.0, (2,): 2.0})
    realization = sample_gaussian_cells_batch(GRID, replicate_rngs(11, 0, 40000, "gaussian"))
    i_f = wiener_integral(f, realization)
    i_g = wiener_integral(g, realization)
    sym = symmetrize(f)
    assert estimate_mean(i_f, target=0.0).passed()
    assert estimate_mean(i_f**2, target=2 * l2_inner(sym, sym)).passed()
    assert estimate_mean(i_f * i_g, target=0.0).passed()


def test_second_moment_bound_for_non_symmetric_integrand():
    # I_2(1_{A×B}) = W(A)W(B)，E = 2‖f̃‖² = μ(A)μ(B) = 0.25 < 2‖f‖² = 0.5
    f = CellwiseFunction.indicator(GRID, 0, 1)
    sym = symmetrize(f)
    realization = sample_gaussian_cells_batch(GRID, replicate_rngs(17, 0, 40000, "gaussian"))
    estimate = estimate_mean(wiener_integral(f, realization) ** 2, target=2 * l2_inner(sym, sym))
    assert estimate.target == pytest.approx(0.25)
    assert estimate.passed()
    assert estimate.mean + 4 * estimate.standard_error < 2 * l2_inner(f, f)


def test_integral_is_invariant_under_symmetrization():
    rng = np.random.default_rng(8)
    realization = sample_gaussian_cells_batch(GRID, replicate_rngs(23, 0, 50, "gaussian"))
    for k in (2, 3, 4):
        f = random_cellwise(k, GRID, rng, nnz=6)
        np.testing.assert_allclose(
            wiener_integral(f, realization), wiener_integral(symmetrize(f), realization),
            rtol=1e-10, atol=1e-12,
        )


def test_simple_functions_use_first_order_table():
    realization = sample_gaussian_cells_batch(GRID, replicate_rngs(29, 0, 20, "gaussian"))
    simple = CellwiseFunction(3, GRID, {(0, 1, 2): 1.5, (2, 0, 1): -0.5})
    repeated = CellwiseFunction(2, GRID, {(0, 0): 1.0, (0, 1): 2.0})
    assert simple.vanishes_on_repeats
    assert not repeated.vanishes_on_repeats
    assert not CellwiseFunction.indicator(GRID, 0, 0).vanishes_on_repeats
    np.testing.assert_allclose(
        wiener_integral(simple, realization),
        evaluate_patterns(simple, wiener_pattern_table(realization, 3)),
        rtol=1e-12,
    )
    w0, w1 = realization.values[:, 0], realization.values[:, 1]
    np.testing.assert_allclose(
        wiener_integral(repeated, realization), (w0**2 - 0.5) + 2.0 * w0 * w1, rtol=1e-10, atol=1e-12
    )


def test_hermite_orthogonality():
    # Gauss–Hermite 求积对 ≤ 39 次多项式精确: E[He_m He_m'] = m!·δ
    nodes, weights = hermegauss(20)
    weights = weights / math.sqrt(2 * math.pi)
    for m in range(9):
        for m_prime in range(9):
            value = np.dot(weights, hermite(m, nodes) * hermite(m_prime, nodes))
            expected = math.factorial(m) if m == m_prime else 0.0
            assert value == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_chaos_series_and_limit_second_moment():
    h = harmonic_box_chaos(3)
    realization = sample_gaussian_cells_batch(h.grid, replicate_rngs(3, 0, 40000, "gaussian"))
    values = chaos_series(h, 3, realization)
    total = limit_second_moment(h)
    assert total == pytest.approx(h_norm(h) ** 2)
    assert estimate_mean(values**2, target=total).passed()
    assert chaos_series(h, 0, realization).tolist() == [0.0] * 40000


def test_limit_second_moment_truncation():
    h = harmonic_box_chaos(4)
    assert limit_second_moment(h, 1) == pytest.approx(1.0)
    assert limit_second_moment(h, 2) < limit_second_moment(h, 4)
