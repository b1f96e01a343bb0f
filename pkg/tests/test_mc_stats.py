import math

import numpy as np
import pytest
from scipy import stats

from errors import DomainError
from mc_stats import MomentEstimate, ShapeReport, estimate_mean, ks_two_sample, shape_statistics


def test_estimate_mean_and_standard_error():
    samples = np.array([1.0, 2.0, 3.0, 4.0])
    estimate = estimate_mean(samples, target=2.5)
    assert estimate.mean == 2.5
    assert estimate.standard_error == pytest.approx(math.sqrt(5.0 / 3.0 / 4.0))
    assert estimate.z_score == 0.0
    assert estimate.passed()


def test_estimate_mean_exact_and_gap():
    estimate = estimate_mean([0.0, 2.0], target=3.0, exact=1.0)
    assert estimate.exact_z == 0.0
    assert estimate.target_gap() == 2.0
    assert "exact" in estimate.describe()


def test_estimate_mean_needs_two_replicates():
    with pytest.raises(DomainError):
        estimate_mean([1.0])


def test_compensated_summation_is_order_stable():
    samples = np.array([1e16, 1.0, -1e16, 1.0] * 10)
    assert estimate_mean(samples).mean == pytest.approx(0.5)


def test_zero_standard_error_z_score():
    assert MomentEstimate(1.0, 0.0, 10, target=1.0).z_score == 0.0
    assert math.isinf(MomentEstimate(1.0, 0.0, 10, target=2.0).z_score)


def test_ks_matches_scipy(rng):
    a = rng.normal(size=500)
    b = rng.normal(0.2, 1.0, size=700)
    report = ks_two_sample(a, b, n=100, k_used=3)
    reference = stats.ks_2samp(a, b, method="asymp")
    assert report.statistic == pytest.approx(reference.statistic)
    assert report.p_value == pytest.approx(reference.pvalue)
    assert report.size_empirical == 500 and report.size_limit == 700


def test_ks_constant_samples():
    same = ks_two_sample(np.zeros(10), np.zeros(20), n=1, k_used=0)
    assert same.statistic == 0.0 and same.p_value == 1.0 and same.note
    different = ks_two_sample(np.zeros(10), np.ones(20), n=1, k_used=0)
    assert different.statistic == 1.0 and different.p_value == 0.0


def test_shape_statistics_gaussian(rng):
    report = shape_statistics(rng.normal(size=20000))
    assert report.passed()
    assert report.skewness_se == pytest.approx(math.sqrt(6.0 / 20000), rel=0.2)
    assert report.excess_kurtosis_se == pytest.approx(math.sqrt(24.0 / 20000), rel=0.3)


def test_shape_statistics_matches_scipy(rng):
    samples = rng.exponential(size=5000)
    report = shape_statistics(samples)
    assert report.skewness == pytest.approx(stats.skew(samples), rel=1e-9)
    assert report.excess_kurtosis == pytest.approx(stats.kurtosis(samples), rel=1e-9)
    assert not report.passed()


def test_shape_statistics_degenerate():
    report = shape_statistics(np.full(100, 3.0))
    assert report.degenerate and not report.passed()
    with pytest.raises(DomainError):
        shape_statistics([1.0, 2.0])


def test_shape_report_scores_against_target():
    report = ShapeReport(0.03, 0.008, 0.001, 0.016, 10**5, skewness_target=0.0316, kurtosis_target=0.001)
    assert report.skewness_z == pytest.approx(-0.2)
    assert report.kurtosis_z == 0.0
    assert report.limit_skewness_z == pytest.approx(3.75)
    assert report.passed()
    assert not ShapeReport(0.05, 0.008, 0.0, 0.016, 10**5).passed()


def test_shape_statistics_against_known_shape(rng):
    # Gamma(4): 偏度 1，超额峰度 1.5
    samples = rng.gamma(4.0, size=20000)
    report = shape_statistics(samples, skewness_target=1.0, kurtosis_target=1.5)
    assert report.passed()
    assert abs(report.limit_skewness_z) > 10.0
    assert report.skewness == pytest.approx(stats.skew(samples), rel=1e-12)
