"""
Entropy-based acquisition on the surrogate.

The pass/fail state of a variation point is a Bernoulli variable whose
likelihood comes from the GP posterior. Its entropy, integrated over the
variation density on a quasi-MC reference set, measures how much the model
still has to learn about the failure boundary; candidates are scored by the
expected reduction of that integral entropy after a fantasy observation.

All functions expect thresholds already expressed in the model's
standardized output space (see :meth:`Thresholds.standardized`).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .config import Direction, OptimizerConfig
from .exceptions import ShapeMismatchError
from .sampling import normal_reference_set
from .surrogate import (
    GpModel,
    predict_batch,
    posterior_gradient,
)

logger = logging.getLogger(__name__)

MIN_REFERENCE_SIZE = 1024
ENTROPY_CLAMP_EPS = 1e-12
# Phi(-8) < 1e-15: a metric this far on the passing side cannot fail.
PRUNE_SIGMAS = 8.0
_CHUNK = 4096
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Thresholds:
    """Per-metric failure thresholds and their directions."""

    z0: np.ndarray
    directions: Tuple[Direction, ...]

    def __post_init__(self) -> None:
        z0 = np.atleast_1d(np.asarray(self.z0, dtype=float))
        directions = tuple(Direction(d) for d in self.directions)
        if z0.ndim != 1 or len(directions) != z0.size:
            raise ShapeMismatchError("Thresholds", "one direction per threshold", (z0.shape, len(directions)))
        if not np.all(np.isfinite(z0)):
            raise ValueError("thresholds must be finite")
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "directions", directions)

    @classmethod
    def single(cls, z0: float, direction: Direction = Direction.FAIL_IF_GREATER) -> "Thresholds":
        return cls(np.array([z0]), (direction,))

    @property
    def k(self) -> int:
        return self.z0.size

    @property
    def signs(self) -> np.ndarray:
        return np.array([d.sign for d in self.directions])

    def standardized(self, y_mean: np.ndarray, y_std: np.ndarray) -> "Thresholds":
        """Same thresholds in an output space normalized by ``(y - mean) / std``."""
        return Thresholds((self.z0 - y_mean) / y_std, self.directions)

    def for_model(self, model: GpModel) -> "Thresholds":
        return self.standardized(model.y_mean, model.y_std)

    def violated(self, Y: np.ndarray) -> np.ndarray:
        """Rows of ``Y`` that violate every metric's threshold."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] != self.k:
            raise ShapeMismatchError("metric columns", self.k, Y.shape[1])
        return np.all(self.signs * (Y - self.z0) > 0.0, axis=1)


@dataclass(frozen=True)
class ReferenceSet:
    """Standard-normal quadrature nodes, frozen for one estimator iteration."""

    points: np.ndarray
    iteration: int = 0

    def __post_init__(self) -> None:
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if points.shape[0] < MIN_REFERENCE_SIZE:
            raise ShapeMismatchError("ReferenceSet size", f">= {MIN_REFERENCE_SIZE}", points.shape[0])
        object.__setattr__(self, "points", points)

    @classmethod
    def sobol(cls, m: int, d: int, iteration: int = 0, offset: int = 0) -> "ReferenceSet":
        """Sobol nodes; each iteration takes the next disjoint run of the sequence after ``offset``."""
        return cls(normal_reference_set(m, d, skip=1 + offset + iteration * m), iteration)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class YieldPosterior:
    """Posterior moments of the failure-probability estimate."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", float(np.clip(self.mean, 0.0, 1.0)))
        object.__setattr__(self, "variance", float(np.clip(self.variance, 0.0, 0.25)))


# ----------------------------------------------------------------------------
# Likelihood and entropy
# ----------------------------------------------------------------------------


def _margins(mean: np.ndarray, var: np.ndarray, thresholds: Thresholds) -> np.ndarray:
    """Signed standardized distance past each threshold; +-inf where the variance is 0."""
    diff = thresholds.signs * (mean - thresholds.z0)
    std = np.sqrt(np.maximum(var, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(std > 0.0, diff / np.where(std > 0.0, std, 1.0), np.sign(diff) * np.inf)
    return np.where((std == 0.0) & (diff == 0.0), 0.0, a)


def likelihood_from_moments(mean: np.ndarray, var: np.ndarray, thresholds: Thresholds) -> np.ndarray:
    """l = prod_k Phi(s_k (mu_k - z_k) / sqrt(v_k)) for ``(M, K)`` moments."""
    mean = np.atleast_2d(mean)
    var = np.atleast_2d(var)
    if mean.shape[1] != thresholds.k:
        raise ShapeMismatchError("posterior metrics", thresholds.k, mean.shape[1])
    return np.clip(np.prod(ndtr(_margins(mean, var, thresholds)), axis=1), 0.0, 1.0)


def pass_likelihood(model: GpModel, thresholds: Thresholds, x: np.ndarray) -> float:
    """Probability under the posterior that ``x`` violates every threshold."""
    return float(likelihood_field(model, thresholds, np.asarray(x, dtype=float)[None, :])[0])


def likelihood_field(
    model: GpModel, thresholds: Thresholds, X: np.ndarray, prune: bool = False
) -> np.ndarray:
    """
    ``l`` at every row of ``X`` (full variation space), chunked.

    With ``prune`` a metric whose mean lies more than ``PRUNE_SIGMAS`` upper-bound
    standard deviations on the passing side zeroes the row without the
    posterior variance being computed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], _CHUNK):
        Z = model.project(X[start:start + _CHUNK])
        if not prune:
            mean, var = model.predict(Z)
            out[start:start + _CHUNK] = likelihood_from_moments(mean, var, thresholds)
            continue
        means, bounds = model.predict_mean_and_bound(Z)
        margin = thresholds.signs * (means - thresholds.z0)
        passing = np.any(margin < -PRUNE_SIGMAS * np.sqrt(bounds), axis=1)
        chunk_l = np.zeros(Z.shape[0])
        live = np.flatnonzero(~passing)
        if live.size:
            var = model.predict(Z[live])[1]
            chunk_l[live] = likelihood_from_moments(means[live], var, thresholds)
        out[start:start + _CHUNK] = chunk_l
    return out


def bernoulli_entropy(l: np.ndarray) -> np.ndarray:
    """-l ln l - (1 - l) ln(1 - l), with l clamped away from 0 and 1."""
    p = np.clip(np.asarray(l, dtype=float), ENTROPY_CLAMP_EPS, 1.0 - ENTROPY_CLAMP_EPS)
    h = -p * np.log(p) - (1.0 - p) * np.log1p(-p)
    return np.maximum(h, 0.0)


def yield_posterior(
    model: GpModel, thresholds: Thresholds, ref: ReferenceSet, prune: bool = False
) -> YieldPosterior:
    """Mean and integrated Bernoulli variance of the failure indicator over ``ref``."""
    l = likelihood_field(model, thresholds, ref.points, prune=prune)
    return YieldPosterior(float(np.mean(l)), float(np.mean(l * (1.0 - l))))


def integral_entropy(model: GpModel, thresholds: Thresholds, ref: ReferenceSet) -> float:
    return float(np.mean(bernoulli_entropy(likelihood_field(model, thresholds, ref.points))))


# ----------------------------------------------------------------------------
# Expected entropy reduction
# ----------------------------------------------------------------------------


@dataclass
class ScoringContext:
    """Per-iteration cache of the reference-set posterior shared by every candidate."""

    model: GpModel
    thresholds: Thresholds
    ref_inputs: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    half_solves: List[np.ndarray]
    ih: float


def scoring_context(model: GpModel, thresholds: Thresholds, ref: ReferenceSet) -> ScoringContext:
    Z = model.project(ref.points)
    mean, var = predict_batch(model, Z)
    half = [c.half_solve(c.cross(Z)) for c in model.components]
    ih = float(np.mean(bernoulli_entropy(likelihood_from_moments(mean, var, thresholds))))
    return ScoringContext(model, thresholds, Z, mean, var, half, ih)


def fantasy_quantiles(n_fantasy: int) -> np.ndarray:
    """Stratified standard-normal quantiles Phi^{-1}((j - 0.5) / n)."""
    if n_fantasy < 1:
        raise ValueError(f"n_fantasy must be >= 1, got {n_fantasy}")
    return ndtri((np.arange(1, n_fantasy + 1) - 0.5) / n_fantasy)


def expected_entropy_reduction(
    model: GpModel,
    thresholds: Thresholds,
    x: np.ndarray,
    ref: Optional[ReferenceSet] = None,
    n_fantasy: int = 8,
    context: Optional[ScoringContext] = None,
) -> float:
    """
    IH(D) minus the mean IH after conditioning on stratified fantasy outcomes at ``x``.

    Each fantasy is a rank-1 posterior update with fixed hyperparameters:
    with c(r) the posterior covariance between the reference point r and x and
    s^2 the predictive variance of the observation at x, the mean moves by
    c(r) q_j / s and the variance drops by c(r)^2 / s^2. The same stratum j is
    used for every metric.
    """
    if context is None:
        if ref is None:
            raise ValueError("expected_entropy_reduction needs a reference set or a scoring context")
        context = scoring_context(model, thresholds, ref)
    q = fantasy_quantiles(n_fantasy)
    z = model.project(np.asarray(x, dtype=float))
    m = context.ref_inputs.shape[0]

    new_mean = np.empty((n_fantasy, m, model.k))
    new_var = np.empty((m, model.k))
    for j, c in enumerate(model.components):
        k_x = c.cross(z)[:, 0]
        v_x = c.half_solve(k_x)
        latent = max(float(c.prior_variance(z)[0]) - float(v_x @ v_x), 0.0)
        obs_var = latent + c.noise + c.jitter
        prior_cross = c.cross_prior(context.ref_inputs, z)[:, 0]
        cov = prior_cross - context.half_solves[j].T @ v_x
        if obs_var <= 0.0:
            new_mean[:, :, j] = context.mean[:, j]
            new_var[:, j] = context.var[:, j]
            continue
        new_mean[:, :, j] = context.mean[None, :, j] + np.outer(q, cov / np.sqrt(obs_var))
        new_var[:, j] = np.maximum(context.var[:, j] - cov * cov / obs_var, 0.0)

    ih_after = np.empty(n_fantasy)
    for f in range(n_fantasy):
        ih_after[f] = np.mean(bernoulli_entropy(likelihood_from_moments(new_mean[f], new_var, thresholds)))
    return max(context.ih - float(np.mean(ih_after)), 0.0)


# ----------------------------------------------------------------------------
# Candidate optimization
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    """An optimized acquisition point and its bookkeeping."""

    point: np.ndarray
    score: float
    seed_score: float
    steps: int
    seed_index: int = -1


def entropy_density_gradient(
    model: GpModel, thresholds: Thresholds, x: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    log H(l(x)) + log p(x) and its gradient in the variation space.

    Only coordinates the model reads (plus, for projections, all of them)
    receive the density term.
    """
    x = np.asarray(x, dtype=float)
    fmap = model.feature_map
    z = model.project(x)[0]
    mean, var = predict_batch(model, z[None, :])
    mean, var = mean[0], var[0]
    grad_mean, grad_var = posterior_gradient(model, z)

    std = np.sqrt(var)
    s = thresholds.signs
    a = s * (mean - thresholds.z0) / std
    l = float(np.prod(ndtr(a)))
    # phi(a) / Phi(a), stable in both tails
    mills = np.exp(-0.5 * a * a - _LOG_SQRT_2PI - log_ndtr(a))
    da = s[:, None] * (grad_mean / std[:, None] - (mean - thresholds.z0)[:, None] * grad_var / (2.0 * var[:, None] * std[:, None]))
    dl = l * np.sum(mills[:, None] * da, axis=0)

    p = min(max(l, ENTROPY_CLAMP_EPS), 1.0 - ENTROPY_CLAMP_EPS)
    h = float(bernoulli_entropy(p))
    dlogh = np.log((1.0 - p) / p) / h * dl

    mask = fmap.input_mask if fmap is not None else np.ones(x.size, dtype=bool)
    grad = fmap.pullback(dlogh) if fmap is not None else dlogh
    grad = grad - np.where(mask, x, 0.0)
    value = np.log(h) - 0.5 * float(np.sum(x[mask] ** 2))
    return value, grad


def optimize_candidate(
    model: GpModel,
    thresholds: Thresholds,
    x0: np.ndarray,
    ref: Optional[ReferenceSet],
    opt_cfg: OptimizerConfig,
    context: Optional[ScoringContext] = None,
    rng_seed: Optional[int] = None,
) -> Candidate:
    """
    Adam ascent of the entropy-density proxy from ``x0``, selecting by exact score.

    Every iterate is scored with :func:`expected_entropy_reduction`; the best
    one (``x0`` included) is returned, so the result never scores below ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("optimize_candidate needs a finite starting point")
    if context is None:
        context = scoring_context(model, thresholds, ref)
    rng = np.random.default_rng(0 if rng_seed is None else rng_seed)

    def score(x: np.ndarray) -> float:
        return expected_entropy_reduction(model, thresholds, x, n_fantasy=opt_cfg.n_fantasy, context=context)

    seed_score = score(x0)
    best_x, best_score = x0.copy(), seed_score
    mask = model.feature_map.input_mask if model.feature_map is not None else np.ones(x0.size, dtype=bool)
    movable = np.flatnonzero(mask)

    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for step in range(opt_cfg.steps):
        with np.errstate(all="ignore"):
            _, grad = entropy_density_gradient(model, thresholds, x)
        if not np.all(np.isfinite(grad)):
            logger.debug(f"non-finite proxy gradient at step {step}; perturbing")
            x = x.copy()
            coord = rng.choice(movable)
            x[coord] += opt_cfg.perturbation * rng.choice((-1.0, 1.0))
        else:
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            m_hat = m / (1 - b1 ** (step + 1))
            v_hat = v / (1 - b2 ** (step + 1))
            x = x + opt_cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        current = score(x)
        if current > best_score:
            best_x, best_score = x.copy(), current
    return Candidate(best_x, best_score, seed_score, opt_cfg.steps)


def candidate_scores(
    model: GpModel,
    thresholds: Thresholds,
    X: np.ndarray,
    n_fantasy: int,
    context: ScoringContext,
) -> np.ndarray:
    """Exact entropy reduction for each row of ``X``."""
    return np.array([
        expected_entropy_reduction(model, thresholds, x, n_fantasy=n_fantasy, context=context)
        for x in np.atleast_2d(X)
    ])


def pointwise_entropy(model: GpModel, thresholds: Thresholds, X: Sequence[np.ndarray]) -> np.ndarray:
    """H(l(x)) for each row of ``X``."""
    return bernoulli_entropy(likelihood_field(model, thresholds, np.atleast_2d(X)))
