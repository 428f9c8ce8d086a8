"""
Covariance functions for the surrogate, plain and deep.

Stationary kernels use the ARD form ``theta0 * g(r^2)`` with
``r^2 = sum_l theta_l (a_l - b_l)^2`` where ``theta_l`` are inverse squared
lengthscales; the RBF is ``theta0 * exp(-r^2)``. All positive parameters are
stored as logs. A deep kernel evaluates the base kernel on MLP features.

Gradient helpers return contractions against a cotangent matrix ``G = dL/dK``
rather than full ``dK/dtheta`` tensors, which keeps training memory at O(N^2).
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from .exceptions import ShapeMismatchError
from .nnet import MlpSpec, MlpWeights, backward_batch, forward_batch, jacobian_batch

_SQRT5 = np.sqrt(5.0)


class BaseKernel(str, Enum):
    RBF = "rbf"
    MATERN52 = "matern52"
    LINEAR = "linear"
    MATERN52_LINEAR = "matern52+linear"

    @property
    def stationary_part(self) -> Optional["BaseKernel"]:
        if self is BaseKernel.MATERN52_LINEAR:
            return BaseKernel.MATERN52
        if self is BaseKernel.LINEAR:
            return None
        return self

    @property
    def has_linear(self) -> bool:
        return self in (BaseKernel.LINEAR, BaseKernel.MATERN52_LINEAR)


@dataclass
class KernelParams:
    """Log-parameterized kernel hyperparameters."""

    log_signal: float = 0.0
    log_inv_lengthscales: np.ndarray = field(default_factory=lambda: np.zeros(1))
    log_linear: float = np.log(0.1)

    @property
    def signal(self) -> float:
        return float(np.exp(self.log_signal))

    @property
    def inv_lengthscales(self) -> np.ndarray:
        return np.exp(self.log_inv_lengthscales)

    @property
    def linear_variance(self) -> float:
        return float(np.exp(self.log_linear))

    def copy(self) -> "KernelParams":
        return KernelParams(self.log_signal, np.array(self.log_inv_lengthscales, dtype=float), self.log_linear)


@dataclass
class KernelSpec:
    """Base kernel choice, its hyperparameters and an optional MLP feature extractor."""

    base: BaseKernel = BaseKernel.MATERN52_LINEAR
    params: KernelParams = field(default_factory=KernelParams)
    mlp: Optional[MlpSpec] = None
    mlp_weights: Optional[MlpWeights] = None

    def __post_init__(self) -> None:
        self.base = BaseKernel(self.base)
        if (self.mlp is None) != (self.mlp_weights is None):
            raise ValueError("deep kernels need both an MlpSpec and MlpWeights")

    @property
    def is_deep(self) -> bool:
        return self.mlp is not None

    @property
    def input_dim(self) -> Optional[int]:
        return self.mlp.input_dim if self.mlp is not None else None

    @property
    def feature_dim(self) -> int:
        return int(np.size(self.params.log_inv_lengthscales))

    def copy(self) -> "KernelSpec":
        return replace(
            self,
            params=self.params.copy(),
            mlp_weights=self.mlp_weights.copy() if self.mlp_weights is not None else None,
        )

    def features(self, X: np.ndarray) -> np.ndarray:
        """Rows mapped into the space the base kernel sees."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.mlp is None:
            return X
        out, _, _ = forward_batch(self.mlp, self.mlp_weights, X)
        return out


def _scaled_sq_dists(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    w = params.inv_lengthscales
    Aw = A * w
    sq = np.sum(Aw * A, axis=1)[:, None] + np.sum(B * w * B, axis=1)[None, :] - 2.0 * Aw @ B.T
    return np.maximum(sq, 0.0)


def _stationary_value_and_slope(kind: BaseKernel, signal: float, r2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Kernel value and its derivative with respect to ``r^2``."""
    if kind is BaseKernel.RBF:
        k = signal * np.exp(-r2)
        return k, -k
    r = np.sqrt(r2)
    e = np.exp(-_SQRT5 * r)
    k = signal * (1.0 + _SQRT5 * r + 5.0 / 3.0 * r2) * e
    slope = -5.0 / 6.0 * signal * (1.0 + _SQRT5 * r) * e
    return k, slope


def base_matrix(base: BaseKernel, params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cross-covariance between feature rows ``A`` and ``B``."""
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatchError("kernel inputs", A.shape[1], B.shape[1])
    K = np.zeros((A.shape[0], B.shape[0]))
    stationary = base.stationary_part
    if stationary is not None:
        if A.shape[1] != np.size(params.log_inv_lengthscales):
            raise ShapeMismatchError("kernel lengthscales", A.shape[1], np.size(params.log_inv_lengthscales))
        K += _stationary_value_and_slope(stationary, params.signal, _scaled_sq_dists(params, A, B))[0]
    if base.has_linear:
        K += params.linear_variance * (A @ B.T)
    return K


def base_diag(base: BaseKernel, params: KernelParams, A: np.ndarray) -> np.ndarray:
    """Prior variances k(a, a) for each feature row."""
    diag = np.zeros(A.shape[0])
    if base.stationary_part is not None:
        diag += params.signal
    if base.has_linear:
        diag += params.linear_variance * np.sum(A * A, axis=1)
    return diag


def base_cross_grad(base: BaseKernel, params: KernelParams, a: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Gradient of ``k(a, b_j)`` with respect to ``a`` for every row ``b_j``; shape ``(m, F)``."""
    a = np.asarray(a, dtype=float)
    grad = np.zeros_like(B, dtype=float)
    stationary = base.stationary_part
    if stationary is not None:
        w = params.inv_lengthscales
        diff = a[None, :] - B
        r2 = np.maximum(np.sum(w * diff * diff, axis=1), 0.0)
        _, slope = _stationary_value_and_slope(stationary, params.signal, r2)
        grad += 2.0 * slope[:, None] * w[None, :] * diff
    if base.has_linear:
        grad += params.linear_variance * B
    return grad


def base_diag_grad(base: BaseKernel, params: KernelParams, a: np.ndarray) -> np.ndarray:
    """Gradient of ``k(a, a)`` with respect to ``a``."""
    if base.has_linear:
        return 2.0 * params.linear_variance * np.asarray(a, dtype=float)
    return np.zeros_like(np.asarray(a, dtype=float))


def base_param_grads(
    base: BaseKernel, params: KernelParams, A: np.ndarray, G: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Contract ``G = dL/dK`` (symmetric) against the kernel on ``A`` with itself.

    Returns gradients with respect to the log-parameters and with respect to
    the feature rows ``A`` (used to backpropagate into the MLP).
    """
    grads: Dict[str, np.ndarray] = {
        "log_signal": np.zeros(()),
        "log_inv_lengthscales": np.zeros(np.size(params.log_inv_lengthscales)),
        "log_linear": np.zeros(()),
    }
    dA = np.zeros_like(A)
    stationary = base.stationary_part
    if stationary is not None:
        w = params.inv_lengthscales
        r2 = _scaled_sq_dists(params, A, A)
        K, slope = _stationary_value_and_slope(stationary, params.signal, r2)
        grads["log_signal"] = np.asarray(np.sum(G * K))
        M = G * slope
        rowsum = M.sum(axis=1)
        MA = M @ A
        # sum_ij M_ij (a_il - a_jl)^2 = 2 sum_i a_il^2 rowsum_i - 2 a_l^T M a_l
        grads["log_inv_lengthscales"] = w * (2.0 * (A * A).T @ rowsum - 2.0 * np.sum(A * MA, axis=0))
        dA += 4.0 * w[None, :] * (A * rowsum[:, None] - MA)
    if base.has_linear:
        c = params.linear_variance
        grads["log_linear"] = np.asarray(c * np.sum(G * (A @ A.T)))
        dA += 2.0 * c * (G @ A)
    return grads, dA


def kernel_matrix(spec: KernelSpec, X: np.ndarray, Y: Optional[np.ndarray] = None) -> np.ndarray:
    """Covariance matrix between raw input rows (features extracted if deep)."""
    FX = spec.features(X)
    FY = FX if Y is None else spec.features(Y)
    return base_matrix(spec.base, spec.params, FX, FY)


def kernel_eval(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> float:
    """Single kernel value k(a, b); for deep kernels k(phi(a, w), phi(b, w))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatchError("kernel_eval points", a.shape, b.shape)
    if spec.input_dim is not None and a.size != spec.input_dim:
        raise ShapeMismatchError("kernel_eval point dimension", spec.input_dim, a.size)
    return float(kernel_matrix(spec, a[None, :], b[None, :])[0, 0])


def kernel_prior_variance(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    return base_diag(spec.base, spec.params, spec.features(X))


def kernel_input_grads(
    spec: KernelSpec, x: np.ndarray, X_train: np.ndarray, F_train: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradients with respect to the raw input ``x`` of ``k(x, X_train)`` rows and of ``k(x, x)``.

    Returns ``(N, D)`` and ``(D,)`` arrays; deep kernels chain through the MLP Jacobian.
    """
    x = np.asarray(x, dtype=float)
    F_train = spec.features(X_train) if F_train is None else F_train
    fx = spec.features(x[None, :])[0]
    g_cross = base_cross_grad(spec.base, spec.params, fx, F_train)
    g_diag = base_diag_grad(spec.base, spec.params, fx)
    if spec.mlp is None:
        return g_cross, g_diag
    J = jacobian_batch(spec.mlp, spec.mlp_weights, x[None, :])[0]
    return g_cross @ J, g_diag @ J


def deep_param_grads(
    spec: KernelSpec, X: np.ndarray, G: np.ndarray
) -> Tuple[Dict[str, np.ndarray], Optional[MlpWeights]]:
    """Hyperparameter and MLP-weight gradients of ``sum(G * K(X, X))``."""
    if spec.mlp is None:
        grads, _ = base_param_grads(spec.base, spec.params, X, G)
        return grads, None
    feats, acts, pre = forward_batch(spec.mlp, spec.mlp_weights, X)
    grads, dF = base_param_grads(spec.base, spec.params, feats, G)
    return grads, backward_batch(spec.mlp, spec.mlp_weights, acts, pre, dF)
