"""
Tests for failure likelihoods, entropies and entropy-reduction scoring.
"""

import numpy as np
import pytest

from hdyield.acquisition import (
    ReferenceSet,
    Thresholds,
    YieldPosterior,
    bernoulli_entropy,
    entropy_density_gradient,
    expected_entropy_reduction,
    fantasy_quantiles,
    integral_entropy,
    likelihood_field,
    likelihood_from_moments,
    optimize_candidate,
    pass_likelihood,
    pointwise_entropy,
    scoring_context,
    yield_posterior,
)
from hdyield.config import Direction, OptimizerConfig
from hdyield.exceptions import ShapeMismatchError
from hdyield.surrogate import fantasy_update, gp_predict

from .conftest import StubModel, constant_stub, fixed_model


@pytest.fixture
def toy_thresholds(toy_model_1d):
    """Raw threshold 0.5 (fail if greater), standardized for the toy model."""
    return Thresholds.single(0.5).for_model(toy_model_1d)


@pytest.fixture
def ref_1d():
    return ReferenceSet.sobol(1024, 1)


class TestThresholds:
    """Test threshold bookkeeping."""

    def test_violated_single(self):
        """A fail-if-greater metric fails strictly above z0."""
        thr = Thresholds.single(0.0)
        np.testing.assert_array_equal(thr.violated(np.array([[1.0], [-1.0], [0.0]])), [True, False, False])

    def test_violated_requires_every_metric(self):
        """A point fails only when every metric is violated."""
        thr = Thresholds(np.array([0.0, 1.0]), (Direction.FAIL_IF_GREATER, Direction.FAIL_IF_LESS))
        Y = np.array([[1.0, 0.0], [1.0, 2.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(thr.violated(Y), [True, False, False])

    def test_standardized(self):
        """Standardizing shifts and scales z0."""
        thr = Thresholds.single(5.0).standardized(np.array([1.0]), np.array([2.0]))
        assert thr.z0[0] == 2.0

    def test_rejects_infinite(self):
        """Thresholds must be finite."""
        with pytest.raises(ValueError):
            Thresholds.single(np.inf)

    def test_direction_count(self):
        """One direction per threshold."""
        with pytest.raises(ShapeMismatchError):
            Thresholds(np.array([0.0, 1.0]), (Direction.FAIL_IF_GREATER,))


class TestLikelihood:
    """Test the Bernoulli failure likelihood."""

    def test_two_sigma_above(self):
        """mu=2, v=1, z0=0 gives Phi(2)."""
        l = likelihood_from_moments(np.array([[2.0]]), np.array([[1.0]]), Thresholds.single(0.0))
        assert l[0] == pytest.approx(0.97725, abs=1e-5)

    def test_fail_if_less_flips(self):
        """The opposite direction gives Phi(-2)."""
        thr = Thresholds.single(0.0, Direction.FAIL_IF_LESS)
        l = likelihood_from_moments(np.array([[2.0]]), np.array([[1.0]]), thr)
        assert l[0] == pytest.approx(1.0 - 0.97725, abs=1e-5)

    def test_zero_variance(self):
        """Without variance the likelihood is the indicator, 1/2 at the threshold."""
        thr = Thresholds.single(0.0)
        l = likelihood_from_moments(np.array([[1.0], [-1.0], [0.0]]), np.zeros((3, 1)), thr)
        np.testing.assert_array_equal(l, [1.0, 0.0, 0.5])

    def test_product_over_metrics(self):
        """Metrics multiply."""
        thr = Thresholds(np.zeros(2), (Direction.FAIL_IF_GREATER, Direction.FAIL_IF_GREATER))
        l = likelihood_from_moments(np.array([[0.0, 2.0]]), np.ones((1, 2)), thr)
        assert l[0] == pytest.approx(0.5 * 0.97725, abs=1e-5)

    def test_stub_model(self):
        """pass_likelihood works on any model exposing project and predict."""
        assert pass_likelihood(constant_stub(2.0, 1.0), Thresholds.single(0.0), np.zeros(3)) == pytest.approx(0.97725, abs=1e-5)

    def test_pruning_matches_exact(self, toy_model_1d, toy_thresholds):
        """Pruned likelihoods differ from exact ones by less than Phi(-8)."""
        X = np.linspace(-6, 6, 5000)[:, None]
        exact = likelihood_field(toy_model_1d, toy_thresholds, X)
        pruned = likelihood_field(toy_model_1d, toy_thresholds, X, prune=True)
        np.testing.assert_allclose(pruned, exact, atol=1e-14)

    def test_pruning_on_stub_model(self):
        """The pruned path only needs project, predict and predict_mean_and_bound."""
        stub = StubModel(lambda Z: 3.0 * Z[:, :1], lambda Z: np.full((Z.shape[0], 1), 0.04))
        X = np.linspace(-4, 4, 401)[:, None]
        exact = likelihood_field(stub, Thresholds.single(0.0), X)
        pruned = likelihood_field(stub, Thresholds.single(0.0), X, prune=True)
        np.testing.assert_allclose(pruned, exact, atol=1e-14)
        assert np.count_nonzero(pruned == 0.0) > 0

    def test_variance_bound(self, toy_model_1d):
        """The cheap bound never undercuts the exact posterior variance."""
        Z = np.linspace(-4, 4, 200)[:, None]
        mean, var = toy_model_1d.predict(Z)
        bound_mean, bound = toy_model_1d.predict_mean_and_bound(Z)
        np.testing.assert_allclose(bound_mean, mean, atol=1e-10)
        assert np.all(bound >= var - 1e-12)


class TestEntropy:
    """Test Bernoulli and integral entropies."""

    def test_quarter(self):
        """H(0.25) = 0.562335."""
        assert bernoulli_entropy(0.25) == pytest.approx(0.562335, abs=1e-6)

    def test_half_is_maximum(self):
        """H(1/2) = ln 2."""
        assert bernoulli_entropy(0.5) == pytest.approx(np.log(2.0))

    def test_endpoints_finite(self):
        """0 and 1 are clamped to a tiny nonnegative entropy."""
        h = bernoulli_entropy(np.array([0.0, 1.0]))
        assert np.all(np.isfinite(h))
        assert np.all((h >= 0.0) & (h < 1e-9))

    def test_integral_entropy_constant_model(self, ref_1d):
        """A constant posterior has integral entropy equal to its pointwise entropy."""
        ih = integral_entropy(constant_stub(0.0, 1.0), Thresholds.single(0.0), ref_1d)
        assert ih == pytest.approx(np.log(2.0))

    def test_pointwise(self, toy_model_1d, toy_thresholds):
        """One entropy per row."""
        assert pointwise_entropy(toy_model_1d, toy_thresholds, np.zeros((4, 1))).shape == (4,)


class TestReferenceSet:
    """Test quadrature reference sets."""

    def test_minimum_size(self):
        """Fewer than 1024 nodes are refused."""
        with pytest.raises(ShapeMismatchError):
            ReferenceSet(np.zeros((1023, 2)))

    def test_iterations_are_disjoint(self):
        """Consecutive iterations use different Sobol runs."""
        a = ReferenceSet.sobol(1024, 2, iteration=0).points
        b = ReferenceSet.sobol(1024, 2, iteration=1).points
        np.testing.assert_array_equal(a[1:], ReferenceSet.sobol(1024, 2, offset=1).points[:-1])
        assert not np.any(np.all(a[:, None, :] == b[None, :, :], axis=2))


class TestYieldPosterior:
    """Test the failure-probability posterior."""

    def test_constant_model(self, ref_1d):
        """A constant posterior gives l and l(1 - l)."""
        post = yield_posterior(constant_stub(2.0, 1.0), Thresholds.single(0.0), ref_1d)
        assert post.mean == pytest.approx(0.97725, abs=1e-5)
        assert post.variance == pytest.approx(0.97725 * 0.02275, abs=1e-5)

    def test_clamped(self):
        """Moments are clamped into their valid ranges."""
        post = YieldPosterior(1.2, 0.5)
        assert post.mean == 1.0 and post.variance == 0.25


class TestExpectedEntropyReduction:
    """Test fantasy-based entropy reduction."""

    def test_quantiles(self):
        """Stratified quantiles are symmetric and a single fantasy sits at 0."""
        q = fantasy_quantiles(8)
        np.testing.assert_allclose(q, -q[::-1], atol=1e-12)
        assert fantasy_quantiles(1)[0] == 0.0

    def test_matches_explicit_fantasies(self, toy_model_1d, toy_thresholds, ref_1d):
        """Rank-1 updates equal refitting on each fantasy observation."""
        x = np.array([2.0])
        n_fantasy = 4
        score = expected_entropy_reduction(toy_model_1d, toy_thresholds, x, ref=ref_1d, n_fantasy=n_fantasy)

        c = toy_model_1d.components[0]
        post = gp_predict(toy_model_1d, x)
        obs_sd = np.sqrt(post.variance[0] + c.noise + c.jitter)
        after = [
            integral_entropy(fantasy_update(toy_model_1d, x, np.array([post.mean[0] + q * obs_sd])), toy_thresholds, ref_1d)
            for q in fantasy_quantiles(n_fantasy)
        ]
        expected = integral_entropy(toy_model_1d, toy_thresholds, ref_1d) - np.mean(after)
        assert score == pytest.approx(max(expected, 0.0), abs=1e-8)

    def test_uncertain_boundary_beats_known_point(self, toy_model_1d, toy_thresholds, ref_1d):
        """Querying between data near the boundary is worth more than repeating a training input."""
        context = scoring_context(toy_model_1d, toy_thresholds, ref_1d)
        boundary = expected_entropy_reduction(toy_model_1d, toy_thresholds, np.array([2.0]), context=context)
        known = expected_entropy_reduction(toy_model_1d, toy_thresholds, np.array([-2.0]), context=context)
        assert boundary > known >= 0.0

    def test_needs_reference(self, toy_model_1d, toy_thresholds):
        """Without a reference set or context scoring is impossible."""
        with pytest.raises(ValueError):
            expected_entropy_reduction(toy_model_1d, toy_thresholds, np.array([0.0]))

    def test_reference_order_does_not_matter(self, toy_model_1d, toy_thresholds, ref_1d):
        """Shuffling the reference nodes leaves the score unchanged."""
        perm = np.random.default_rng(3).permutation(ref_1d.m)
        shuffled = ReferenceSet(ref_1d.points[perm])
        for x in (np.array([1.5]), np.array([-0.5]), np.array([2.4])):
            a = expected_entropy_reduction(toy_model_1d, toy_thresholds, x, ref=ref_1d)
            b = expected_entropy_reduction(toy_model_1d, toy_thresholds, x, ref=shuffled)
            assert b == pytest.approx(a, rel=1e-10, abs=1e-14)


class TestOptimizeCandidate:
    """Test candidate ascent."""

    def test_never_below_seed(self, toy_model_1d, toy_thresholds, ref_1d):
        """The returned score is at least the starting score."""
        cand = optimize_candidate(toy_model_1d, toy_thresholds, np.array([0.5]), ref_1d, OptimizerConfig(steps=20))
        assert cand.score >= cand.seed_score
        assert np.all(np.isfinite(cand.point))

    def test_zero_steps_returns_seed(self, toy_model_1d, toy_thresholds, ref_1d):
        """With no steps the seed comes back unchanged."""
        cand = optimize_candidate(toy_model_1d, toy_thresholds, np.array([0.5]), ref_1d, OptimizerConfig(steps=0))
        np.testing.assert_array_equal(cand.point, [0.5])
        assert cand.score == cand.seed_score

    def test_deterministic(self, toy_model_1d, toy_thresholds, ref_1d):
        """Same inputs, same candidate."""
        cfg = OptimizerConfig(steps=10)
        a = optimize_candidate(toy_model_1d, toy_thresholds, np.array([1.2]), ref_1d, cfg, rng_seed=4)
        b = optimize_candidate(toy_model_1d, toy_thresholds, np.array([1.2]), ref_1d, cfg, rng_seed=4)
        np.testing.assert_array_equal(a.point, b.point)

    def test_rejects_non_finite_seed(self, toy_model_1d, toy_thresholds, ref_1d):
        """Starting points must be finite."""
        with pytest.raises(ValueError):
            optimize_candidate(toy_model_1d, toy_thresholds, np.array([np.nan]), ref_1d, OptimizerConfig())

    @pytest.mark.parametrize("offset", [-0.3, 0.3])
    def test_reaches_grid_argmax(self, ref_1d, offset):
        """Started 0.3 away, the ascent ends within 0.05 of the best point of a fine grid scan."""
        X = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
        model = fixed_model(X, 0.5 * X[:, 0], noise=1e-4, inv_lengthscale=0.5)
        thresholds = Thresholds.single(0.0).for_model(model)
        context = scoring_context(model, thresholds, ref_1d)
        grid = np.linspace(-1.0, 1.0, 201)[:, None]
        scores = [expected_entropy_reduction(model, thresholds, g, context=context) for g in grid]
        peak = grid[int(np.argmax(scores)), 0]

        cand = optimize_candidate(
            model, thresholds, np.array([peak + offset]), ref_1d, OptimizerConfig(steps=100, learning_rate=0.02)
        )
        assert abs(cand.point[0] - peak) <= 0.05

    def test_proxy_gradient(self, toy_model_1d, toy_thresholds):
        """The entropy-density proxy gradient matches central differences."""
        x = np.array([1.8])
        value, grad = entropy_density_gradient(toy_model_1d, toy_thresholds, x)
        h = 1e-6
        up, _ = entropy_density_gradient(toy_model_1d, toy_thresholds, x + h)
        down, _ = entropy_density_gradient(toy_model_1d, toy_thresholds, x - h)
        assert np.isfinite(value)
        assert grad[0] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-6)


class TestEntropyProperties:
    """Randomized and stub-based entropy properties."""

    def test_stub_probability_half(self):
        """l(x) = Phi(x_1) integrates to one half over the normal density."""
        stub = StubModel(lambda Z: Z[:, :1], lambda Z: np.ones((Z.shape[0], 1)))
        ref = ReferenceSet.sobol(1 << 14, 2)
        assert yield_posterior(stub, Thresholds.single(0.0), ref).mean == pytest.approx(0.5, abs=0.01)

    def test_integral_entropy_bounds(self, small_dataset):
        """IH lies in [0, ln 2] for random thresholds."""
        X, y = small_dataset
        model = fixed_model(X, y, noise=1e-2, inv_lengthscale=0.5)
        ref = ReferenceSet.sobol(1024, 3)
        for z0 in (-1.0, 0.0, 0.7, 2.5):
            ih = integral_entropy(model, Thresholds.single(z0), ref)
            assert 0.0 <= ih <= np.log(2.0)

    def test_fantasy_at_highest_entropy_point_reduces_ih(self, small_dataset):
        """Observing the most uncertain reference point at its mean lowers IH."""
        X, y = small_dataset
        model = fixed_model(X, y, noise=1e-2, inv_lengthscale=0.5)
        thr = Thresholds.single(0.5).for_model(model)
        ref = ReferenceSet.sobol(1024, 3)
        h = pointwise_entropy(model, thr, ref.points)
        x = ref.points[int(np.argmax(h))]
        before = integral_entropy(model, thr, ref)
        after = integral_entropy(fantasy_update(model, x, gp_predict(model, x).mean), thr, ref)
        assert after < before

    def test_duplicate_point_scores_zero(self):
        """Re-querying a noiselessly observed point gains nothing."""
        X = np.array([[-1.0], [0.0], [1.0]])
        model = fixed_model(X, np.array([-1.0, 0.0, 1.0]), noise=1e-10, inv_lengthscale=0.5)
        thr = Thresholds.single(0.2).for_model(model)
        score = expected_entropy_reduction(model, thr, np.array([0.0]), ref=ReferenceSet.sobol(1024, 1))
        assert score == pytest.approx(0.0, abs=1e-6)

    def test_non_negative_scores(self, toy_model_1d, toy_thresholds, ref_1d):
        """Expected entropy reduction is never negative."""
        context = scoring_context(toy_model_1d, toy_thresholds, ref_1d)
        for x in np.linspace(-4.0, 4.0, 17):
            assert expected_entropy_reduction(toy_model_1d, toy_thresholds, np.array([x]), context=context) >= 0.0
