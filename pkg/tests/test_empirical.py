import math

import numpy as np
import pytest
from scipy import stats

from empirical import (
    CellCounts,
    counts_from_points,
    draw_counts,
    draw_counts_batch,
    draw_points,
    empirical_integral,
    empirical_integral_bruteforce,
    empirical_pattern_table,
    k_schedule,
    phi_empirical_explicit,
    truncated_chaos,
    w_n,
    w_n_covariance,
)
from errors import BudgetExceededError, DomainError, GridMismatchError
from integrands import (
    CellwiseFunction,
    ChaosVector,
    Grid,
    StepFunction,
    TensorPowerFunction,
    harmonic_box_chaos,
    random_cellwise,
    symmetrize,
)
from mc_stats import estimate_mean
from replicates import replicate_rngs

GRID = Grid(((0.0, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, 3.0)))
UNIT = Grid(((0.0, 1.0),))
ADJACENT = Grid(((0.0, 1.0), (1.0, 2.0)))


def test_cell_counts_validation(schedule):
    with pytest.raises(DomainError):
        CellCounts(5, UNIT, np.array([3, 1]), schedule)
    with pytest.raises(DomainError):
        CellCounts(5, UNIT, np.array([3]), schedule)
    counts = CellCounts(5, UNIT, np.array([[3, 2], [0, 5]]), schedule)
    assert counts.replicates == 2
    assert counts.rest.tolist() == [2, 5]


def test_draw_counts_sums_to_n(schedule, rng):
    counts = draw_counts(1000, GRID, rng, schedule)
    assert counts.counts.sum() == 1000
    assert counts.counts.shape == (len(GRID) + 1,)
    empty = draw_counts(0, GRID, rng, schedule)
    assert empty.counts.tolist() == [0] * (len(GRID) + 1)


def test_draw_counts_outside_window_all_rest(schedule, rng):
    far = Grid(((50.0, 60.0),))
    counts = draw_counts(100, far, rng, schedule)
    assert counts.counts.tolist() == [0, 100]


def test_draw_points_stay_in_window(weighted_schedule, rng):
    sample = draw_points(500, weighted_schedule, rng)
    assert sample.points.min() >= 0.0
    assert sample.points.max() <= weighted_schedule.window_end(500)


def test_pattern_recurrence_matches_explicit_sum(schedule):
    counts = CellCounts(30, GRID, np.array([4, 0, 7, 2, 17]), schedule)
    table = empirical_pattern_table(counts, 8)
    a = schedule.a_n(30)
    q = 30 * schedule.cell_masses(GRID.cells, 30, kind="p_n")
    for i, count in enumerate(counts.cell_counts):
        for m in range(9):
            expected = phi_empirical_explicit(count, q[i], a, m)
            assert table[m, i] == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_pattern_table_multiplicity_guard(schedule):
    counts = CellCounts(3, UNIT, np.array([1, 2]), schedule)
    with pytest.raises(DomainError):
        empirical_pattern_table(counts, 21)


def test_first_order_integral_is_w_n(schedule, rng):
    counts = draw_counts(400, GRID, rng, schedule)
    f = CellwiseFunction(1, GRID, {(0,): 1.0, (1,): 1.0})
    assert empirical_integral(f, counts) == pytest.approx(w_n(counts, [(0.0, 1.0)]), rel=1e-12)


def test_w_n_requires_grid_alignment(schedule, rng):
    counts = draw_counts(100, GRID, rng, schedule)
    with pytest.raises(GridMismatchError):
        w_n(counts, [(0.0, 0.75)])


def test_w_n_covariance_closed_form(schedule):
    n = 10**4
    assert w_n_covariance(schedule, n, [(0.0, 1.0)], [(0.0, 1.0)]) == pytest.approx(0.99, rel=1e-12)
    assert w_n_covariance(schedule, n, [(0.0, 1.0)], [(1.0, 2.0)]) == pytest.approx(-0.01, rel=1e-12)


def test_oracle_equivalence_random_integrands(schedule):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(200):
        k = 1 + trial % 3
        n = int(rng.integers(1, 31))
        f = random_cellwise(k, GRID, rng, nnz=int(rng.integers(1, 6)))
        sample = draw_points(n, schedule, rng)
        fast = empirical_integral(f, counts_from_points(sample, f.grid))
        brute = empirical_integral_bruteforce(f, sample)
        worst = max(worst, abs(fast - brute) / max(1.0, abs(brute)))
    assert worst <= 1e-10


def test_oracle_equivalence_tensor_power_fast_path(schedule, rng):
    base = StepFunction(GRID, (0.5, -1.0, 2.0, 0.25))
    sample = draw_points(20, schedule, rng)
    counts = counts_from_points(sample, GRID)
    for k in (1, 2, 3):
        power = TensorPowerFunction(base, k)
        assert empirical_integral(power, counts) == pytest.approx(
            empirical_integral_bruteforce(power.expand(), sample), rel=1e-10, abs=1e-10
        )


def test_bruteforce_budget(schedule, rng):
    sample = draw_points(400, schedule, rng)
    f = CellwiseFunction.indicator(GRID, 0, 1, 2)
    with pytest.raises(BudgetExceededError):
        empirical_integral_bruteforce(f, sample)


def test_batch_evaluation_matches_single(schedule):
    f = CellwiseFunction(2, GRID, {(0, 0): 1.0, (1, 2): -0.5, (3, 1): 2.0})
    batch = draw_counts_batch(200, GRID, replicate_rngs(7, 0, 5), schedule)
    values = empirical_integral(f, batch)
    for r, rng in enumerate(replicate_rngs(7, 0, 5)):
        single = draw_counts(200, GRID, rng, schedule)
        assert values[r] == pytest.approx(empirical_integral(f, single), rel=1e-12)


def test_mean_of_second_order_unit_square(schedule):
    square = CellwiseFunction.indicator(UNIT, 0, 0)
    counts = draw_counts_batch(100, UNIT, replicate_rngs(99, 0, 20000), schedule)
    estimate = estimate_mean(empirical_integral(square, counts), target=-0.1)
    assert estimate.passed()


def test_brownian_bridge_covariance_monte_carlo(schedule):
    n = 10**4
    counts = draw_counts_batch(n, ADJACENT, replicate_rngs(5, 0, 20000), schedule)
    first = w_n(counts, [(0.0, 1.0)])
    second = w_n(counts, [(1.0, 2.0)])
    assert estimate_mean(first**2, target=0.99).passed()
    assert estimate_mean(first * second, target=-0.01).passed()


@pytest.mark.parametrize("n, expected", [(1, 0), (10**3, 3), (10**4, 4), (10**6, 5), (10**8, 6)])
def test_k_schedule_default(schedule, n, expected):
    assert k_schedule(n, 2.0, 0.5, schedule) == expected


def test_k_schedule_rejects_bad_parameters():
    with pytest.raises(DomainError):
        k_schedule(100, 2.0, 1.0)
    with pytest.raises(DomainError):
        k_schedule(100, 0.0, 0.5)


def test_truncated_chaos_orders(schedule, rng):
    h = harmonic_box_chaos(3)
    counts = draw_counts(500, h.grid, rng, schedule)
    assert truncated_chaos(h, 0, counts) == 0.0
    expected = sum(empirical_integral(h.component(k), counts) for k in (1, 2))
    assert truncated_chaos(h, 2, counts) == pytest.approx(expected, rel=1e-12)
    # 超出 K_max 的阶视为 0
    assert truncated_chaos(h, 10, counts) == pytest.approx(truncated_chaos(h, 3, counts), rel=1e-12)


def test_truncated_chaos_constant_component(schedule, rng):
    h = ChaosVector((CellwiseFunction.constant(2.5, UNIT),))
    counts = draw_counts(50, UNIT, rng, schedule)
    assert truncated_chaos(h, 3, counts) == 2.5
    assert math.isclose(truncated_chaos(h, 0, counts), 2.5)


def test_empirical_integral_is_invariant_under_symmetrization(schedule):
    rng = np.random.default_rng(31)
    counts = draw_counts_batch(300, GRID, replicate_rngs(41, 0, 50), schedule)
    for k in (2, 3, 4):
        f = random_cellwise(k, GRID, rng, nnz=6)
        np.testing.assert_allclose(
            empirical_integral(f, counts), empirical_integral(symmetrize(f), counts),
            rtol=1e-10, atol=1e-12,
        )


def test_multinomial_counts_match_binned_points(schedule):
    n, replicates = 100, 2000
    multinomial = draw_counts_batch(n, GRID, replicate_rngs(51, 0, replicates), schedule).counts
    binned = np.stack([
        counts_from_points(draw_points(n, schedule, rng), GRID).counts
        for rng in replicate_rngs(52, 0, replicates)
    ])
    for i in range(len(GRID) + 1):
        result = stats.ks_2samp(multinomial[:, i], binned[:, i], method="asymp")
        assert result.pvalue > 1e-3, (i, result.statistic)


def test_truncated_chaos_is_linear(schedule):
    rng = np.random.default_rng(61)
    first = ChaosVector((None, random_cellwise(1, GRID, rng), random_cellwise(2, GRID, rng)))
    second = ChaosVector((None, random_cellwise(1, GRID, rng), random_cellwise(2, GRID, rng)))
    combined = ChaosVector(tuple(
        None if a is None else 2.0 * a + (-0.5) * b
        for a, b in zip(first.components, second.components)
    ))
    counts = draw_counts_batch(500, GRID, replicate_rngs(62, 0, 30), schedule)
    np.testing.assert_allclose(
        truncated_chaos(combined, 2, counts),
        2.0 * truncated_chaos(first, 2, counts) - 0.5 * truncated_chaos(second, 2, counts),
        rtol=1e-10, atol=1e-10,
    )
