"""
Multi-layer perceptron feature extractor for the deep kernel.

The network maps a (selected) variation vector to a low-dimensional feature
vector on which the base GP kernel is evaluated. Forward pass, input Jacobian
and reverse-mode weight gradients are written out explicitly so the surrogate
can differentiate its marginal likelihood and its posterior without an
autodiff framework.

Layer ``l`` computes ``z_l = W_l a_{l-1} + b_l`` with ``W_l`` of shape
``(out, in)``; the activation is applied after every layer except the last.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import ShapeMismatchError

# Input dimensions below this use the narrow three-hidden-layer network.
WIDE_ARCHITECTURE_MIN_DIM = 128


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        # Subgradient convention at the kink: relu'(0) = 0.
        return (z > 0.0).astype(float)
    t = np.tanh(z)
    return 1.0 - t * t


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first, feature dimension last) and hidden activation."""

    layer_sizes: Tuple[int, ...]
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes needs >= 2 positive entries, got {self.layer_sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def feature_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @classmethod
    def default_for(cls, input_dim: int, activation: Activation = Activation.RELU) -> "MlpSpec":
        """Narrow 200-100-10 network for small inputs, wide 1000-500-200-20 otherwise."""
        if input_dim < WIDE_ARCHITECTURE_MIN_DIM:
            hidden: Sequence[int] = (200, 100, 10)
        else:
            hidden = (1000, 500, 200, 20)
        return cls((input_dim, *hidden), activation)


@dataclass
class MlpWeights:
    """Per-layer weight matrices and bias vectors."""

    weights: List[np.ndarray] = field(default_factory=list)
    biases: List[np.ndarray] = field(default_factory=list)

    def copy(self) -> "MlpWeights":
        return MlpWeights([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def from_flat(cls, spec: MlpSpec, flat: np.ndarray) -> "MlpWeights":
        weights, biases = [], []
        offset = 0
        for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            size = fan_out * fan_in
            weights.append(np.array(flat[offset:offset + size]).reshape(fan_out, fan_in))
            offset += size
            biases.append(np.array(flat[offset:offset + fan_out]))
            offset += fan_out
        if offset != flat.size:
            raise ShapeMismatchError("flat MLP weight vector", offset, flat.size)
        return cls(weights, biases)

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in zip(self.weights, self.biases))


def init_weights(spec: MlpSpec, seed: int) -> MlpWeights:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpWeights(weights, biases)


def check_weights(spec: MlpSpec, weights: MlpWeights) -> None:
    if len(weights.weights) != spec.n_layers or len(weights.biases) != spec.n_layers:
        raise ShapeMismatchError("MLP layer count", spec.n_layers, len(weights.weights))
    for l, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        if weights.weights[l].shape != (fan_out, fan_in):
            raise ShapeMismatchError(f"weight matrix {l}", (fan_out, fan_in), weights.weights[l].shape)
        if weights.biases[l].shape != (fan_out,):
            raise ShapeMismatchError(f"bias vector {l}", (fan_out,), weights.biases[l].shape)


def _as_batch(spec: MlpSpec, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.input_dim:
        raise ShapeMismatchError("MLP input", spec.input_dim, X.shape[1])
    return X


def forward_batch(
    spec: MlpSpec, weights: MlpWeights, X: np.ndarray
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """
    Forward pass over the rows of ``X``.

    Returns the ``(n, feature_dim)`` outputs together with the per-layer
    activations (input included) and pre-activations needed for backprop.
    """
    A = _as_batch(spec, X)
    activations = [A]
    pre_activations = []
    for l, (W, b) in enumerate(zip(weights.weights, weights.biases)):
        Z = A @ W.T + b
        pre_activations.append(Z)
        A = Z if l == spec.n_layers - 1 else _activate(spec.activation, Z)
        activations.append(A)
    return A, activations, pre_activations


def backward_batch(
    spec: MlpSpec,
    weights: MlpWeights,
    activations: List[np.ndarray],
    pre_activations: List[np.ndarray],
    upstream: np.ndarray,
) -> MlpWeights:
    """Weight gradients of ``sum_i <upstream_i, phi(x_i)>`` from a recorded forward pass."""
    delta = np.atleast_2d(np.asarray(upstream, dtype=float))
    grad_w: List[np.ndarray] = [np.empty(0)] * spec.n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * spec.n_layers
    for l in range(spec.n_layers - 1, -1, -1):
        grad_w[l] = delta.T @ activations[l]
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ weights.weights[l]) * _activate_grad(spec.activation, pre_activations[l - 1])
    return MlpWeights(grad_w, grad_b)


def mlp_forward(spec: MlpSpec, weights: MlpWeights, x: np.ndarray) -> np.ndarray:
    """Feature vector phi(x, w) for a single point."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeMismatchError("MLP input point", "a 1-d vector", x.shape)
    check_weights(spec, weights)
    out, _, _ = forward_batch(spec, weights, x[None, :])
    return out[0]


def mlp_input_jacobian(spec: MlpSpec, weights: MlpWeights, x: np.ndarray) -> np.ndarray:
    """Jacobian d phi_i / d x_j, shape ``(feature_dim, input_dim)``."""
    x = np.asarray(x, dtype=float)
    check_weights(spec, weights)
    _, _, pre = forward_batch(spec, weights, x[None, :])
    J = weights.weights[0].copy()
    for l in range(1, spec.n_layers):
        J = weights.weights[l] @ (_activate_grad(spec.activation, pre[l - 1][0])[:, None] * J)
    return J


def jacobian_batch(spec: MlpSpec, weights: MlpWeights, X: np.ndarray) -> np.ndarray:
    """Per-row input Jacobians, shape ``(n, feature_dim, input_dim)``."""
    _, _, pre = forward_batch(spec, weights, X)
    n = pre[0].shape[0]
    J = np.broadcast_to(weights.weights[0], (n,) + weights.weights[0].shape).copy()
    for l in range(1, spec.n_layers):
        gated = _activate_grad(spec.activation, pre[l - 1])[:, :, None] * J
        J = np.einsum("oh,nhd->nod", weights.weights[l], gated)
    return J


def mlp_weight_gradients(
    spec: MlpSpec, weights: MlpWeights, x: np.ndarray, upstream: np.ndarray
) -> MlpWeights:
    """Reverse-mode gradients of ``<upstream, phi(x, w)>`` with respect to every weight and bias."""
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (spec.feature_dim,):
        raise ShapeMismatchError("upstream cotangent", (spec.feature_dim,), upstream.shape)
    check_weights(spec, weights)
    _, acts, pre = forward_batch(spec, weights, np.asarray(x, dtype=float)[None, :])
    return backward_batch(spec, weights, acts, pre, upstream[None, :])
