"""Tests for the evaluation-point criteria and their orderings."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpcma.acquisition import (
    AcquisitionSpec,
    criterion_values,
    ei,
    normal_cdf,
    normal_pdf,
    normal_quantile,
    poi,
    quantile_criterion,
    rank_candidates,
)


class TestNormalFunctions:
    def test_cdf_at_zero(self):
        assert normal_cdf(0.0) == 0.5

    def test_cdf_reference_value(self):
        assert normal_cdf(1.96) == pytest.approx(0.9750021048517795, abs=1e-12)

    def test_pdf_at_zero(self):
        assert normal_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)

    def test_quantile_at_half(self):
        assert normal_quantile(0.5) == 0.0

    def test_quantile_inverts_cdf(self):
        for alpha in np.linspace(0.01, 0.99, 25):
            assert normal_cdf(normal_quantile(alpha)) == pytest.approx(alpha, abs=1e-10)

    def test_quantile_domain(self):
        for bad in (0.0, 1.0, -0.3, 1.5):
            with pytest.raises(ValueError, match="alpha must lie in"):
                normal_quantile(bad)

    def test_cdf_accuracy_against_erf(self):
        zs = np.linspace(-8, 8, 1601)
        ref = np.array([0.5 * math.erfc(-z / math.sqrt(2)) for z in zs])
        assert np.abs(normal_cdf(zs) - ref).max() < 1e-12


class TestQuantileCriterion:
    def test_alpha_half_returns_mean(self):
        assert quantile_criterion(1.7, 5.0, 0.5) == 1.7

    def test_zero_variance_returns_mean(self):
        for alpha in (0.1, 0.5, 0.9):
            assert quantile_criterion(2.5, 0.0, alpha) == 2.5

    def test_hand_value(self):
        # u_alpha = -1 at alpha = cdf(-1); mu=1, var=4 -> 1 - 2*1 = -1
        alpha = float(normal_cdf(-1.0))
        assert quantile_criterion(1.0, 4.0, alpha) == pytest.approx(-1.0, abs=1e-12)

    def test_quantile_identity(self):
        rng = np.random.default_rng(1)
        for alpha in np.arange(0.01, 1.0, 0.07):
            mu, var = rng.normal(), rng.uniform(0.1, 4.0)
            lhs = mu + math.sqrt(var) * normal_quantile(alpha)
            rhs = mu - math.sqrt(var) * normal_quantile(1 - alpha)
            assert lhs == pytest.approx(rhs, abs=1e-10)
            assert quantile_criterion(mu, var, alpha) == pytest.approx(lhs, abs=1e-12)


class TestPoi:
    def test_half_at_threshold(self):
        assert poi(3.0, 2.0, 3.0) == 0.5

    def test_degenerate_certain_improvement(self):
        assert poi(1.0, 0.0, 2.0) == 1.0

    def test_degenerate_no_improvement_at_equality(self):
        assert poi(2.0, 0.0, 2.0) == 0.0
        assert poi(3.0, 0.0, 2.0) == 0.0

    def test_one_sd_below(self):
        # threshold - mu = sd -> cdf(1)
        assert poi(0.0, 4.0, 2.0) == pytest.approx(0.8413447460685429, abs=1e-12)

    @given(st.floats(-50, 50), st.floats(0, 100), st.floats(-50, 50))
    @settings(max_examples=200, deadline=None)
    def test_bounded(self, mu, var, threshold):
        p = poi(mu, var, threshold)
        assert 0.0 <= p <= 1.0


class TestEi:
    def test_degenerate_no_improvement(self):
        assert ei(5.0, 0.0, 5.0) == 0.0
        assert ei(6.0, 0.0, 5.0) == 0.0

    def test_degenerate_certain_improvement(self):
        assert ei(3.0, 0.0, 5.0) == 2.0

    def test_at_incumbent_unit_variance(self):
        assert ei(1.0, 1.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(8):
            mu = float(rng.uniform(-2, 2))
            var = float(rng.uniform(0.05, 4.0))
            f_min = float(rng.uniform(-2, 2))
            draws = rng.normal(mu, math.sqrt(var), size=10**6)
            improvement = np.where(draws < f_min, f_min - draws, 0.0)
            estimate = improvement.mean()
            stderr = improvement.std(ddof=1) / math.sqrt(len(draws))
            assert abs(ei(mu, var, f_min) - estimate) < 3 * stderr + 1e-12

    def test_nondecreasing_in_variance(self):
        for mu, f_min in [(0.0, 1.0), (1.0, 0.0), (2.0, 2.0)]:
            values = [ei(mu, v, f_min) for v in np.linspace(0.0, 5.0, 60)]
            diffs = np.diff(values)
            assert np.all(diffs >= -1e-10)

    @given(st.floats(-50, 50), st.floats(0, 100), st.floats(-50, 50))
    @settings(max_examples=200, deadline=None)
    def test_nonnegative(self, mu, var, f_min):
        assert ei(mu, var, f_min) >= 0.0


class TestRankCandidates:
    def test_descending_for_ei(self):
        order = rank_candidates([0.1, 0.5, 0.3], AcquisitionSpec("ei"))
        assert list(order) == [1, 2, 0]

    def test_ascending_for_quantile(self):
        order = rank_candidates([0.1, 0.5, 0.3], AcquisitionSpec("quantile", alpha=0.3))
        assert list(order) == [0, 2, 1]

    def test_stable_on_ties(self):
        spec = AcquisitionSpec("poi")
        order = rank_candidates([0.5, 0.2, 0.5, 0.5], spec)
        assert list(order) == [0, 2, 3, 1]

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="NaN"):
            rank_candidates([0.1, math.nan], AcquisitionSpec("ei"))

    def test_ei_order_reverses_quantile_order(self):
        rng = np.random.default_rng(5)
        values = rng.permutation(10).astype(float)  # distinct
        up = rank_candidates(values, AcquisitionSpec("quantile", alpha=0.5))
        down = rank_candidates(values, AcquisitionSpec("ei"))
        assert list(up) == list(down[::-1])


class TestAcquisitionSpec:
    def test_direction(self):
        assert AcquisitionSpec("ei").maximizes
        assert AcquisitionSpec("poi").maximizes
        assert not AcquisitionSpec("quantile", alpha=0.2).maximizes

    def test_alpha_validation(self):
        with pytest.raises(ValueError, match="alpha must lie in"):
            AcquisitionSpec("quantile", alpha=1.0)
        with pytest.raises(ValueError):
            AcquisitionSpec("quantile")

    def test_threshold_required(self):
        with pytest.raises(ValueError):
            AcquisitionSpec("poi_threshold")

    def test_criterion_values_dispatch(self):
        mu = np.array([0.0, 1.0])
        var = np.array([1.0, 1.0])
        np.testing.assert_allclose(
            criterion_values(AcquisitionSpec("ei"), mu, var, f_min=0.5),
            ei(mu, var, 0.5))
        np.testing.assert_allclose(
            criterion_values(AcquisitionSpec("poi"), mu, var, f_min=0.5),
            poi(mu, var, 0.5))
        np.testing.assert_allclose(
            criterion_values(AcquisitionSpec("poi_threshold", threshold=0.2), mu, var, f_min=0.5),
            poi(mu, var, 0.2))
        np.testing.assert_allclose(
            criterion_values(AcquisitionSpec("quantile", alpha=0.25), mu, var),
            quantile_criterion(mu, var, 0.25))

    def test_threshold_above_incumbent_rejected(self):
        spec = AcquisitionSpec("poi_threshold", threshold=1.0)
        with pytest.raises(ValueError, match="must not exceed"):
            criterion_values(spec, np.zeros(2), np.ones(2), f_min=0.5)
