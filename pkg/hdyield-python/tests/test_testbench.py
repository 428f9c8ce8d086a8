"""
Tests for the synthetic testbenches and their Monte Carlo oracle.
"""

import numpy as np
import pytest

from hdyield.config import BenchKind, BenchSpec, Direction
from hdyield.exceptions import CalibrationError, ShapeMismatchError
from hdyield.sampling import lhs_points, to_standard_normal
from hdyield.shrinkage import hsic_lasso_for_count, select_top
from hdyield.testbench import (
    build_bench,
    calibrate_threshold,
    make_linear_tail,
    make_quadratic,
    make_sram_like,
    mc_oracle,
)


@pytest.fixture(scope="module")
def small_sram():
    return make_sram_like(20, 4, 2, target_pf=1e-3, seed=3, calibration_samples=200_000)


class TestLinearTail:
    """Test the analytic one-dimensional tail bench."""

    def test_exact_oracle(self):
        """Threshold 2 fails with probability Phi(-2)."""
        bench = make_linear_tail(threshold=2.0)
        assert bench.oracle_pf == pytest.approx(0.02275, abs=1e-5)
        np.testing.assert_array_equal(bench.failed(np.array([[2.5], [1.5]])), [True, False])

    def test_target_pf(self):
        """A target failure rate sets the threshold at the upper quantile."""
        bench = make_linear_tail(target_pf=0.025)
        assert bench.thresholds.z0[0] == pytest.approx(1.959964, abs=1e-6)

    def test_extra_dimensions_ignored(self):
        """Only coordinate 0 matters."""
        bench = make_linear_tail(dimension=3, threshold=0.0)
        np.testing.assert_array_equal(bench.eval(np.array([[1.0, 5.0, -5.0]])), [[1.0]])

    def test_far_threshold_never_fails(self):
        """A very large threshold gives a zero oracle."""
        bench = make_linear_tail(threshold=50.0)
        assert bench.oracle_pf == 0.0
        assert mc_oracle(bench, 10_000, 0) == (0.0, 0.0)

    def test_needs_exactly_one_argument(self):
        """target_pf and threshold are mutually exclusive."""
        with pytest.raises(ValueError):
            make_linear_tail(target_pf=0.1, threshold=1.0)


class TestSramLike:
    """Test the sparse delay-like bench."""

    def test_calibrated_near_target(self, small_sram):
        """The calibrated failure rate is within 10% of the target."""
        assert abs(small_sram.oracle_pf - 1e-3) / 1e-3 < 0.1
        assert small_sram.oracle_se > 0.0

    def test_oracle_reproduces_calibration_sample(self, small_sram):
        """mc_oracle with the calibration seed and size recovers the calibrated rate."""
        pf, _ = mc_oracle(small_sram, 200_000, 3)
        assert pf == small_sram.oracle_pf

    def test_inactive_coordinates_ignored(self, small_sram):
        """Perturbing inactive coordinates leaves the metric unchanged."""
        x = np.random.default_rng(0).standard_normal((1, 20))
        inactive = [i for i in range(20) if i not in small_sram.active_dims]
        y = x.copy()
        y[0, inactive] += 3.0
        np.testing.assert_array_equal(small_sram.eval(x), small_sram.eval(y))

    def test_rebuild_from_spec(self, small_sram):
        """A stored spec rebuilds the same bench without recalibrating."""
        rebuilt = build_bench(small_sram.to_spec())
        X = np.random.default_rng(1).standard_normal((50, 20))
        np.testing.assert_array_equal(rebuilt.eval(X), small_sram.eval(X))
        assert rebuilt.thresholds.z0[0] == small_sram.thresholds.z0[0]
        assert rebuilt.oracle_pf == small_sram.oracle_pf

    def test_pure_function(self, small_sram):
        """Evaluation is deterministic and shaped (N, 1)."""
        X = np.zeros((4, 20))
        assert small_sram.eval(X).shape == (4, 1)
        np.testing.assert_array_equal(small_sram.eval(X), small_sram.eval(X))

    def test_wrong_dimension(self, small_sram):
        """Inputs must have the bench dimension."""
        with pytest.raises(ShapeMismatchError):
            small_sram.eval(np.zeros((1, 19)))

    def test_with_threshold_clears_oracle(self, small_sram):
        """A moved threshold invalidates the oracle."""
        moved = small_sram.with_threshold(0.0)
        assert moved.oracle_pf is None
        assert moved.to_spec().threshold == 0.0

    def test_target_pf_range(self):
        """sram_like benches accept target rates in (1e-6, 1e-2) only."""
        with pytest.raises(ValueError):
            BenchSpec(name="x", kind=BenchKind.SRAM_LIKE, dimension=10, n_active=2, target_pf=0.1)


class TestQuadratic:
    """Test the quadratic bench."""

    def test_base_value(self):
        """At the origin the metric is its base value."""
        bench = make_quadratic(10, 3, target_pf=1e-2, seed=0, calibration_samples=50_000)
        assert bench.eval(np.zeros((1, 10)))[0, 0] == 1.0
        assert len(bench.active_dims) == 3


class TestCalibration:
    """Test threshold calibration."""

    def test_fail_if_less(self):
        """The lower tail is calibrated for fail-if-less metrics."""
        z0, pf, _ = calibrate_threshold(lambda X: X[:, :1], 1, 0.05, 100_000, 0, Direction.FAIL_IF_LESS)
        assert z0 == pytest.approx(-1.645, abs=0.05)
        assert abs(pf - 0.05) / 0.05 < 0.1

    def test_constant_metric_fails(self):
        """A metric with no spread cannot be calibrated."""
        with pytest.raises(CalibrationError):
            calibrate_threshold(lambda X: np.zeros((X.shape[0], 1)), 2, 1e-3, 1000, 0)

    def test_mc_oracle_rejects_empty(self):
        """At least one sample is needed."""
        with pytest.raises(ValueError):
            mc_oracle(make_linear_tail(threshold=1.0), 0, 0)


@pytest.mark.slow
class TestActiveDimensionRecall:
    """Test HSIC-Lasso ranking on a sparse high-dimensional bench."""

    def test_hsic_ranks_active_dimensions(self):
        """At least 80% of the active coordinates rank within the top n_active + 5."""
        n_active = 12
        bench = make_sram_like(60, n_active, 2, target_pf=1e-3, seed=5, calibration_samples=100_000)
        X = to_standard_normal(lhs_points(1500, bench.dimension, 0)).points
        weights = hsic_lasso_for_count(X, bench.eval(X), n_active + 5, max_rows=1500)
        top = set(select_top(weights, n_active + 5))
        hits = len(top & set(bench.active_dims))
        assert hits >= 0.8 * n_active
