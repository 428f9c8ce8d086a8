"""
Gaussian-process regression with plain and deep kernels.

Each performance metric gets its own GP (own hyperparameters, own MLP) over a
shared selected-feature space. Targets are standardized per metric before
fitting; everything in this module works in that standardized space.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .config import TrainConfig
from .exceptions import FactorizationError, NonFiniteGradientError, ShapeMismatchError
from .kernels import (
    BaseKernel,
    KernelParams,
    KernelSpec,
    base_diag,
    base_matrix,
    deep_param_grads,
    kernel_input_grads,
)
from .nnet import Activation, MlpSpec, MlpWeights, init_weights
from .shrinkage import FeatureMap

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)
_LOG_2PI = np.log(2.0 * np.pi)
_PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class Dataset:
    """Training corpus: raw inputs, raw metrics and per-metric normalizers."""

    X: np.ndarray
    Y: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    standardized: bool = True

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise ShapeMismatchError("Dataset", "X (N, D) and Y (N, K) with equal N", (self.X.shape, self.Y.shape))
        if self.X.shape[0] < 1:
            raise ShapeMismatchError("Dataset rows", ">= 1", 0)
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("Dataset contains NaN or infinite values")

    @classmethod
    def from_arrays(cls, X: np.ndarray, Y: np.ndarray, standardize: bool = True) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if standardize:
            mean = Y.mean(axis=0)
            std = Y.std(axis=0)
            std = np.where(std > 0.0, std, 1.0)
        else:
            mean = np.zeros(Y.shape[1])
            std = np.ones(Y.shape[1])
        return cls(X, Y, mean, std, standardize)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return self.Y.shape[1]

    def standardize(self, Y: np.ndarray) -> np.ndarray:
        return (np.asarray(Y, dtype=float) - self.y_mean) / self.y_std

    def unstandardize(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.y_std + self.y_mean

    @property
    def Z(self) -> np.ndarray:
        """Standardized targets."""
        return self.standardize(self.Y)

    def extend(self, X_new: np.ndarray, Y_new: np.ndarray) -> "Dataset":
        """Append observations and recompute the normalizers."""
        Y_new = np.asarray(Y_new, dtype=float)
        if Y_new.ndim == 1:
            Y_new = Y_new[:, None]
        return Dataset.from_arrays(
            np.vstack([self.X, np.atleast_2d(X_new)]), np.vstack([self.Y, Y_new]),
            standardize=self.standardized,
        )

    def mapped(self, feature_map: FeatureMap) -> "Dataset":
        """Same observations with inputs mapped into a selected feature space."""
        return replace(self, X=feature_map.apply(self.X))


@dataclass(frozen=True)
class PosteriorGaussian:
    """Per-metric predictive mean and (latent) variance at one point."""

    mean: np.ndarray
    variance: np.ndarray


@dataclass
class GpComponent:
    """A single-output GP: kernel, noise, training inputs and their Cholesky factor."""

    kernel: KernelSpec
    noise: float
    X: np.ndarray
    y: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    features: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def solve(self, B: np.ndarray) -> np.ndarray:
        """(K + noise I)^{-1} B via the Cholesky factor."""
        return linalg.cho_solve((self.L, True), B)

    def half_solve(self, B: np.ndarray) -> np.ndarray:
        """L^{-1} B."""
        return linalg.solve_triangular(self.L, B, lower=True)

    def cross(self, Xs: np.ndarray) -> np.ndarray:
        """k(X_train, Xs), shape (N, M)."""
        return base_matrix(self.kernel.base, self.kernel.params, self.features, self.kernel.features(Xs))

    def cross_prior(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Prior covariance k(A, B) between two sets of input rows."""
        return base_matrix(self.kernel.base, self.kernel.params, self.kernel.features(A), self.kernel.features(B))

    def prior_variance(self, Xs: np.ndarray) -> np.ndarray:
        return base_diag(self.kernel.base, self.kernel.params, self.kernel.features(Xs))


@dataclass
class GpModel:
    """Independent per-metric GPs over a shared (selected) input space."""

    components: Tuple[GpComponent, ...]
    y_mean: np.ndarray
    y_std: np.ndarray
    feature_map: Optional[FeatureMap] = None

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def d(self) -> int:
        return self.components[0].X.shape[1]

    def project(self, X_full: np.ndarray) -> np.ndarray:
        """Map full variation-space rows into the model's input space."""
        X_full = np.atleast_2d(np.asarray(X_full, dtype=float))
        return X_full if self.feature_map is None else self.feature_map.apply(X_full)

    def predict(self, Xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Standardized-space means and latent variances at mapped inputs, ``(M, K)`` each."""
        return predict_batch(self, Xs)

    def predict_mean(self, Xs: np.ndarray) -> np.ndarray:
        return predict_mean_batch(self, Xs)

    def predict_mean_and_bound(self, Xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Means and posterior-variance upper bounds, ``(M, K)`` each, without triangular solves."""
        results = [predict_mean_and_bound(c, Xs) for c in self.components]
        return np.column_stack([r[0] for r in results]), np.column_stack([r[1] for r in results])

    def lengthscales(self, metric: int = 0) -> np.ndarray:
        """Conventional lengthscales 1/sqrt(2 theta_l) of the stationary part."""
        return 1.0 / np.sqrt(2.0 * self.components[metric].kernel.params.inv_lengthscales)


def _factor(K: np.ndarray, noise: float) -> Tuple[np.ndarray, float]:
    n = K.shape[0]
    for jitter in JITTER_LADDER:
        try:
            L = linalg.cholesky(K + (noise + jitter) * np.eye(n), lower=True)
        except linalg.LinAlgError:
            continue
        if jitter > 0.0:
            logger.warning(f"Covariance factorized only after adding jitter {jitter:g}")
        return L, jitter
    raise FactorizationError(
        f"Covariance of {n} points is not positive definite after jitter {JITTER_LADDER[-1]:g}",
        jitter=JITTER_LADDER[-1],
    )


def build_component(kernel: KernelSpec, noise: float, X: np.ndarray, y: np.ndarray) -> GpComponent:
    """Factor K + noise I for fixed hyperparameters."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    F = kernel.features(X)
    K = base_matrix(kernel.base, kernel.params, F, F)
    L, jitter = _factor(K, noise)
    alpha = linalg.cho_solve((L, True), y)
    return GpComponent(kernel, float(noise), X, y, L, alpha, jitter, F)


def build_model(
    data: Dataset,
    kernels: Sequence[KernelSpec],
    noises: Sequence[float],
    feature_map: Optional[FeatureMap] = None,
) -> GpModel:
    """Assemble a model from given hyperparameters without training."""
    if len(kernels) != data.k or len(noises) != data.k:
        raise ShapeMismatchError("kernels per metric", data.k, len(kernels))
    Z = data.Z
    components = tuple(build_component(kernels[j], noises[j], data.X, Z[:, j]) for j in range(data.k))
    return GpModel(components, data.y_mean.copy(), data.y_std.copy(), feature_map)


def _component_lml(c: GpComponent) -> float:
    return float(-0.5 * c.y @ c.alpha - np.sum(np.log(np.diag(c.L))) - 0.5 * c.n * _LOG_2PI)


def log_marginal_likelihood(model: GpModel) -> float:
    """Sum over metrics of -1/2 y^T (K + s I)^{-1} y - 1/2 ln|K + s I| - N/2 ln 2 pi."""
    return sum(_component_lml(c) for c in model.components)


# ----------------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------------


def _pack(kernel: KernelSpec, noise: float) -> np.ndarray:
    p = kernel.params
    parts = [np.array([p.log_signal]), np.atleast_1d(p.log_inv_lengthscales), np.array([p.log_linear, np.log(noise)])]
    if kernel.mlp_weights is not None:
        parts.append(kernel.mlp_weights.flatten())
    return np.concatenate(parts)


def _unpack(template: KernelSpec, theta: np.ndarray) -> Tuple[KernelSpec, float]:
    f = template.feature_dim
    params = KernelParams(float(theta[0]), np.array(theta[1:1 + f]), float(theta[1 + f]))
    log_noise = float(theta[2 + f])
    weights = MlpWeights.from_flat(template.mlp, theta[3 + f:]) if template.mlp is not None else None
    return replace(template, params=params, mlp_weights=weights), float(np.exp(log_noise))


def lml_and_gradient(kernel: KernelSpec, noise: float, X: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray, GpComponent]:
    """Log marginal likelihood of one metric and its gradient in packed log-parameter order."""
    c = build_component(kernel, noise, X, y)
    lml = _component_lml(c)
    K_inv = c.solve(np.eye(c.n))
    G = 0.5 * (np.outer(c.alpha, c.alpha) - K_inv)
    grads, mlp_grads = deep_param_grads(kernel, c.X, G)
    parts = [
        np.atleast_1d(grads["log_signal"]),
        np.atleast_1d(grads["log_inv_lengthscales"]),
        np.atleast_1d(grads["log_linear"]),
        np.array([noise * np.trace(G)]),
    ]
    if mlp_grads is not None:
        parts.append(mlp_grads.flatten())
    return lml, np.concatenate(parts), c


def _initial_kernel(base: BaseKernel, cfg: TrainConfig, input_dim: int, seed: int) -> KernelSpec:
    mlp = mlp_weights = None
    feature_dim = input_dim
    if cfg.deep:
        activation = Activation(cfg.activation)
        if cfg.hidden_layers:
            mlp = MlpSpec((input_dim, *cfg.hidden_layers), activation)
        else:
            mlp = MlpSpec.default_for(input_dim, activation)
        mlp_weights = init_weights(mlp, seed)
        feature_dim = mlp.feature_dim
    params = KernelParams(
        log_signal=0.0,
        log_inv_lengthscales=np.full(feature_dim, -np.log(2.0 * feature_dim)),
        log_linear=np.log(0.1),
    )
    return KernelSpec(base, params, mlp, mlp_weights)


def _adam_ascent(
    kernel: KernelSpec, noise: float, X: np.ndarray, y: np.ndarray, cfg: TrainConfig, iterations: int
) -> Tuple[KernelSpec, float, float, float]:
    """Adam ascent on the likelihood; returns the best iterate seen and the initial likelihood."""
    theta = _pack(kernel, noise)
    f = kernel.feature_dim
    noise_slot = 2 + f
    lo, hi = np.log(cfg.noise_min), np.log(cfg.noise_max)
    theta[noise_slot] = np.clip(theta[noise_slot], lo, hi)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8

    best_theta = theta.copy()
    best_lml = -np.inf
    initial_lml = -np.inf
    for it in range(iterations + 1):
        current, current_noise = _unpack(kernel, theta)
        try:
            lml, grad, _ = lml_and_gradient(current, current_noise, X, y)
        except FactorizationError:
            if it == 0:
                raise
            logger.warning(f"Factorization failed at training step {it}; keeping best iterate")
            break
        if it == 0:
            initial_lml = lml
        if lml > best_lml:
            best_lml, best_theta = lml, theta.copy()
        if it == iterations:
            break
        bad = ~np.isfinite(grad)
        if np.any(bad):
            slot = int(np.argmax(bad))
            name = "log_signal" if slot == 0 else "log_inv_lengthscales" if slot <= f else "log_linear" if slot == f + 1 else "log_noise" if slot == noise_slot else "mlp_weights"
            raise NonFiniteGradientError(it, name)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1 ** (it + 1))
        v_hat = v / (1 - b2 ** (it + 1))
        theta = theta + cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        theta[noise_slot] = np.clip(theta[noise_slot], lo, hi)
    best_kernel, best_noise = _unpack(kernel, best_theta)
    return best_kernel, best_noise, best_lml, initial_lml


def _restart_kernel(template: KernelSpec, cfg: TrainConfig, rng: np.random.Generator, seed: int) -> KernelSpec:
    base = _initial_kernel(template.base, cfg, template.input_dim or template.feature_dim, seed) if template.is_deep else template.copy()
    p = base.params
    p.log_signal += rng.normal(0.0, 0.5)
    p.log_inv_lengthscales = p.log_inv_lengthscales + rng.normal(0.0, 0.5, size=p.log_inv_lengthscales.shape)
    p.log_linear += rng.normal(0.0, 0.5)
    return base


def fit_component(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    kernel: Optional[KernelSpec] = None,
    noise: Optional[float] = None,
    iterations: Optional[int] = None,
    restarts: Optional[int] = None,
    seed: int = 0,
) -> GpComponent:
    """Maximize one metric's marginal likelihood from ``kernel`` (or a default) plus random restarts."""
    iterations = cfg.iterations if iterations is None else iterations
    restarts = cfg.restarts if restarts is None else restarts
    rng = np.random.default_rng(seed)
    start = kernel.copy() if kernel is not None else _initial_kernel(BaseKernel(cfg.base_kernel), cfg, X.shape[1], seed)
    start_noise = cfg.noise_init if noise is None else noise

    best: Optional[Tuple[KernelSpec, float, float]] = None
    for r in range(restarts):
        init = start if r == 0 else _restart_kernel(start, cfg, rng, seed + 7919 * r)
        try:
            k_fit, n_fit, lml, lml0 = _adam_ascent(init, start_noise, X, y, cfg, iterations)
        except FactorizationError as e:
            logger.warning(f"Restart {r} could not be factorized: {e}")
            continue
        logger.debug(f"restart {r}: log-likelihood {lml0:.4f} -> {lml:.4f}")
        if best is None or lml > best[2]:
            best = (k_fit, n_fit, lml)
    if best is None:
        raise FactorizationError("Every training restart failed to factorize the covariance matrix")
    return build_component(best[0], best[1], X, y)


def gp_fit(
    data: Dataset,
    cfg: TrainConfig,
    feature_map: Optional[FeatureMap] = None,
    warm_start: Optional[GpModel] = None,
    seed: int = 0,
) -> GpModel:
    """
    Train one GP per metric by marginal-likelihood ascent.

    ``data`` holds the inputs the model sees (already mapped);
    ``feature_map`` records how they were obtained from the variation space. A warm start
    reuses the previous hyperparameters when the input space is unchanged and
    runs ``cfg.refit_iterations`` steps with a single restart.
    """
    if data.n < 2:
        logger.warning("Fitting a GP to a single observation; hyperparameters stay at their initial values")
    Z = data.Z
    components: List[GpComponent] = []
    for j in range(data.k):
        component_seed = seed + 104729 * j
        reuse = (
            warm_start is not None
            and warm_start.d == data.d
            and (
                warm_start.feature_map is None
                if feature_map is None
                else feature_map.same_as(warm_start.feature_map)
            )
        )
        if reuse:
            prev = warm_start.components[j]
            comp = fit_component(
                data.X, Z[:, j], cfg, kernel=prev.kernel, noise=prev.noise,
                iterations=cfg.refit_iterations, restarts=1, seed=component_seed,
            )
        else:
            iterations = cfg.iterations if data.n >= 2 else 0
            comp = fit_component(data.X, Z[:, j], cfg, iterations=iterations, seed=component_seed)
        components.append(comp)
    model = GpModel(tuple(components), data.y_mean.copy(), data.y_std.copy(), feature_map)
    logger.debug(f"Fitted {data.k} GP(s) on {data.n} points, log-likelihood {log_marginal_likelihood(model):.4f}")
    return model


# ----------------------------------------------------------------------------
# Prediction
# ----------------------------------------------------------------------------


def predict_component(c: GpComponent, Xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at the rows of ``Xs``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    means = np.empty(Xs.shape[0])
    variances = np.empty(Xs.shape[0])
    for start in range(0, Xs.shape[0], _PREDICT_CHUNK):
        chunk = Xs[start:start + _PREDICT_CHUNK]
        Ks = c.cross(chunk)
        means[start:start + _PREDICT_CHUNK] = Ks.T @ c.alpha
        V = c.half_solve(Ks)
        variances[start:start + _PREDICT_CHUNK] = c.prior_variance(chunk) - np.sum(V * V, axis=0)
    return means, np.maximum(variances, 0.0)


def predict_batch(model: GpModel, Xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Means and variances, each of shape ``(M, K)``, in standardized output space."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if Xs.shape[1] != model.d:
        raise ShapeMismatchError("prediction inputs", model.d, Xs.shape[1])
    results = [predict_component(c, Xs) for c in model.components]
    return np.column_stack([r[0] for r in results]), np.column_stack([r[1] for r in results])


def predict_mean_batch(model: GpModel, Xs: np.ndarray) -> np.ndarray:
    """Posterior means only (no triangular solves), shape ``(M, K)``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    out = np.empty((Xs.shape[0], model.k))
    for j, c in enumerate(model.components):
        for start in range(0, Xs.shape[0], _PREDICT_CHUNK):
            out[start:start + _PREDICT_CHUNK, j] = c.cross(Xs[start:start + _PREDICT_CHUNK]).T @ c.alpha
    return out


def predict_mean_and_bound(c: GpComponent, Xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Posterior mean and an upper bound on the posterior variance, both O(N M).

    Conditioning on a single training point never gives a smaller variance
    than conditioning on all of them, so the tightest one-point bound is used.
    """
    Ks = c.cross(Xs)
    mean = Ks.T @ c.alpha
    train_var = base_diag(c.kernel.base, c.kernel.params, c.features) + c.noise + c.jitter
    reduction = np.max(Ks * Ks / train_var[:, None], axis=0)
    return mean, np.maximum(c.prior_variance(Xs) - reduction, 0.0)


def gp_predict(model: GpModel, x: np.ndarray) -> PosteriorGaussian:
    x = np.asarray(x, dtype=float)
    mean, var = predict_batch(model, x[None, :])
    return PosteriorGaussian(mean[0], var[0])


def predict_raw(model: GpModel, Xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Predictions mapped back to the metrics' original units."""
    mean, var = predict_batch(model, Xs)
    return mean * model.y_std + model.y_mean, var * model.y_std ** 2


# ----------------------------------------------------------------------------
# Fantasy updates
# ----------------------------------------------------------------------------


def extend_component(c: GpComponent, x: np.ndarray, y: float) -> GpComponent:
    """Condition on one more observation by extending the Cholesky factor by a row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k_vec = c.cross(x)[:, 0]
    kxx = float(c.prior_variance(x)[0]) + c.noise + c.jitter
    l12 = c.half_solve(k_vec)
    l22_sq = kxx - float(l12 @ l12)
    l22 = np.sqrt(max(l22_sq, np.finfo(float).eps * max(kxx, 1.0)))
    n = c.n
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = c.L
    L[n, :n] = l12
    L[n, n] = l22
    y_all = np.append(c.y, y)
    alpha = linalg.cho_solve((L, True), y_all)
    features = np.vstack([c.features, c.kernel.features(x)])
    return GpComponent(c.kernel, c.noise, np.vstack([c.X, x]), y_all, L, alpha, c.jitter, features)


def fantasy_update(model: GpModel, x: np.ndarray, y_hypothetical: np.ndarray) -> GpModel:
    """
    Model conditioned on a hypothetical observation, hyperparameters unchanged.

    ``y_hypothetical`` is given per metric in standardized output space.
    """
    x = np.asarray(x, dtype=float)
    y = np.atleast_1d(np.asarray(y_hypothetical, dtype=float))
    if y.shape != (model.k,) or not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise ValueError("fantasy observation must be finite with one value per metric")
    components = tuple(extend_component(c, x, y[j]) for j, c in enumerate(model.components))
    return replace(model, components=components)


def posterior_cross_covariance(c: GpComponent, x: np.ndarray, Xs: np.ndarray, Vs: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Posterior covariance between ``f(x)`` and ``f`` at each row of ``Xs``.

    ``Vs = L^{-1} k(X_train, Xs)`` may be passed in when ``Xs`` is reused.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if Vs is None:
        Vs = c.half_solve(c.cross(Xs))
    vx = c.half_solve(c.cross(x)[:, 0])
    prior = c.cross_prior(Xs, x)[:, 0]
    return prior - Vs.T @ vx


# ----------------------------------------------------------------------------
# Gradients with respect to the input
# ----------------------------------------------------------------------------


def posterior_gradient(model: GpModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of the posterior mean and variance with respect to ``x``; each ``(K, D)``."""
    x = np.asarray(x, dtype=float)
    grad_mean = np.empty((model.k, x.size))
    grad_var = np.empty((model.k, x.size))
    for j, c in enumerate(model.components):
        g_cross, g_diag = kernel_input_grads(c.kernel, x, c.X, c.features)
        k_star = c.cross(x[None, :])[:, 0]
        grad_mean[j] = g_cross.T @ c.alpha
        grad_var[j] = g_diag - 2.0 * g_cross.T @ c.solve(k_star)
    return grad_mean, grad_var
