"""
Tests for plain and deep covariance functions.
"""

import numpy as np
import pytest

from hdyield.exceptions import ShapeMismatchError
from hdyield.kernels import (
    BaseKernel,
    KernelParams,
    KernelSpec,
    base_param_grads,
    deep_param_grads,
    kernel_eval,
    kernel_input_grads,
    kernel_matrix,
)
from hdyield.nnet import Activation, MlpSpec, MlpWeights, init_weights


def _params(d, log_signal=0.0, inv_lengthscale=1.0, log_linear=np.log(0.1)):
    return KernelParams(log_signal, np.full(d, np.log(inv_lengthscale)), log_linear)


class TestKernelEval:
    """Test single kernel evaluations."""

    def test_rbf_unit_distance(self):
        """RBF with unit parameters at distance 1 is exp(-1)."""
        spec = KernelSpec(BaseKernel.RBF, _params(2))
        assert abs(kernel_eval(spec, np.zeros(2), np.array([1.0, 0.0])) - 0.367879) < 1e-6

    @pytest.mark.parametrize("base", [BaseKernel.RBF, BaseKernel.MATERN52])
    def test_stationary_at_zero_distance(self, base):
        """k(a, a) is the signal variance."""
        spec = KernelSpec(base, _params(3, log_signal=np.log(2.5)))
        a = np.array([0.3, -1.0, 2.0])
        assert abs(kernel_eval(spec, a, a) - 2.5) < 1e-12

    def test_linear_part_adds_inner_product(self):
        """The linear term contributes c * <a, b>."""
        params = _params(2, log_linear=np.log(0.5))
        a, b = np.array([1.0, 2.0]), np.array([3.0, -1.0])
        plain = kernel_eval(KernelSpec(BaseKernel.MATERN52, params), a, b)
        mixed = kernel_eval(KernelSpec(BaseKernel.MATERN52_LINEAR, params), a, b)
        assert abs(mixed - plain - 0.5) < 1e-12

    def test_symmetric(self):
        """k(a, b) equals k(b, a)."""
        spec = KernelSpec(BaseKernel.MATERN52_LINEAR, _params(3, inv_lengthscale=0.7))
        a, b = np.array([0.1, 0.2, 0.3]), np.array([-1.0, 0.5, 2.0])
        assert kernel_eval(spec, a, b) == pytest.approx(kernel_eval(spec, b, a), rel=1e-14)

    def test_deep_identity_matches_base(self):
        """An identity MLP leaves the kernel unchanged."""
        params = _params(3, inv_lengthscale=0.4)
        deep = KernelSpec(BaseKernel.RBF, params, MlpSpec((3, 3)), MlpWeights([np.eye(3)], [np.zeros(3)]))
        a, b = np.array([0.5, 1.0, -0.5]), np.array([0.0, 0.2, 0.9])
        assert kernel_eval(deep, a, b) == pytest.approx(kernel_eval(KernelSpec(BaseKernel.RBF, params), a, b))

    def test_dimension_mismatch(self):
        """Points of different length are rejected."""
        spec = KernelSpec(BaseKernel.RBF, _params(2))
        with pytest.raises(ShapeMismatchError):
            kernel_eval(spec, np.zeros(2), np.zeros(3))

    def test_deep_requires_weights(self):
        """A deep kernel without weights is invalid."""
        with pytest.raises(ValueError):
            KernelSpec(BaseKernel.RBF, _params(2), MlpSpec((3, 2)), None)


class TestKernelMatrix:
    """Test covariance matrices."""

    def test_positive_semidefinite(self, rng):
        """Gram matrices have no negative eigenvalues beyond round-off."""
        X = rng.standard_normal((25, 4))
        for base in BaseKernel:
            spec = KernelSpec(base, _params(4, inv_lengthscale=0.3))
            K = kernel_matrix(spec, X)
            np.testing.assert_allclose(K, K.T, atol=1e-12)
            assert np.linalg.eigvalsh(K).min() > -1e-8

    def test_deep_gram_positive_semidefinite(self, rng):
        """The deep kernel is PSD on the raw inputs."""
        mlp = MlpSpec((5, 8, 3), Activation.TANH)
        spec = KernelSpec(BaseKernel.MATERN52_LINEAR, _params(3), mlp, init_weights(mlp, 2))
        K = kernel_matrix(spec, rng.standard_normal((20, 5)))
        assert np.linalg.eigvalsh(K).min() > -1e-8


class TestKernelGradients:
    """Test analytic kernel gradients against finite differences."""

    @pytest.mark.parametrize("base", list(BaseKernel))
    def test_hyperparameter_gradients(self, base, rng):
        """Contracted log-parameter gradients match central differences."""
        A = rng.standard_normal((7, 2))
        G = rng.standard_normal((7, 7))
        G = G + G.T
        params = KernelParams(0.3, np.array([-0.4, 0.2]), np.log(0.2))
        grads, _ = base_param_grads(base, params, A, G)

        def objective(p):
            return float(np.sum(G * kernel_matrix(KernelSpec(base, p), A)))

        h = 1e-6
        for name in ("log_signal", "log_linear"):
            plus, minus = params.copy(), params.copy()
            setattr(plus, name, getattr(params, name) + h)
            setattr(minus, name, getattr(params, name) - h)
            fd = (objective(plus) - objective(minus)) / (2 * h)
            assert float(grads[name]) == pytest.approx(fd, rel=1e-5, abs=1e-6)
        for l in range(2):
            plus, minus = params.copy(), params.copy()
            plus.log_inv_lengthscales[l] += h
            minus.log_inv_lengthscales[l] -= h
            fd = (objective(plus) - objective(minus)) / (2 * h)
            assert grads["log_inv_lengthscales"][l] == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_mlp_weight_gradients(self, rng):
        """Gradients through the MLP match central differences."""
        mlp = MlpSpec((3, 4, 2), Activation.TANH)
        spec = KernelSpec(BaseKernel.RBF, _params(2, inv_lengthscale=0.5), mlp, init_weights(mlp, 5))
        X = rng.standard_normal((6, 3))
        G = rng.standard_normal((6, 6))
        G = G + G.T
        _, wgrad = deep_param_grads(spec, X, G)
        flat = spec.mlp_weights.flatten()
        analytic = wgrad.flatten()
        h = 1e-6
        for i in range(0, flat.size, 3):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += h
            minus[i] -= h
            sp = KernelSpec(spec.base, spec.params, mlp, MlpWeights.from_flat(mlp, plus))
            sm = KernelSpec(spec.base, spec.params, mlp, MlpWeights.from_flat(mlp, minus))
            fd = (np.sum(G * kernel_matrix(sp, X)) - np.sum(G * kernel_matrix(sm, X))) / (2 * h)
            assert analytic[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)

    def test_input_gradients(self, rng):
        """d k(x, X) / d x matches central differences for a deep kernel."""
        mlp = MlpSpec((3, 5, 2), Activation.TANH)
        spec = KernelSpec(BaseKernel.MATERN52_LINEAR, _params(2, inv_lengthscale=0.6), mlp, init_weights(mlp, 1))
        X_train = rng.standard_normal((4, 3))
        x = np.array([0.2, -0.3, 0.8])
        g_cross, _ = kernel_input_grads(spec, x, X_train)
        h = 1e-6
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = (kernel_matrix(spec, (x + e)[None, :], X_train)[0] - kernel_matrix(spec, (x - e)[None, :], X_train)[0]) / (2 * h)
            np.testing.assert_allclose(g_cross[:, j], fd, rtol=1e-5, atol=1e-7)
