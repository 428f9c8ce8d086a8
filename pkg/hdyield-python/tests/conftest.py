"""
Shared fixtures for the hdyield test suite.
"""

import os
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import pytest

from hdyield.kernels import BaseKernel, KernelParams, KernelSpec
from hdyield.surrogate import Dataset, GpModel, build_model


def pytest_addoption(parser):
    parser.addoption("--slow", action="store_true", default=False, help="Run slow acceptance experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--slow") or os.getenv("HDYIELD_SLOW", "").strip().lower() in ("1", "true", "yes"):
        return
    skip_slow = pytest.mark.skip(reason="slow acceptance experiment (use --slow or HDYIELD_SLOW=1)")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@dataclass
class StubModel:
    """Model stand-in with prescribed posterior moments in the variation space."""

    mean_fn: Callable[[np.ndarray], np.ndarray]
    var_fn: Callable[[np.ndarray], np.ndarray]
    feature_map: Optional[object] = None

    @property
    def k(self) -> int:
        return 1

    def project(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float))

    def predict(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        Z = np.atleast_2d(Z)
        return np.asarray(self.mean_fn(Z), dtype=float), np.asarray(self.var_fn(Z), dtype=float)

    def predict_mean(self, Z: np.ndarray) -> np.ndarray:
        return self.predict(Z)[0]

    def predict_mean_and_bound(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        # The exact variance is its own bound.
        return self.predict(Z)


def constant_stub(mean: float, var: float) -> StubModel:
    return StubModel(
        lambda Z: np.full((Z.shape[0], 1), mean),
        lambda Z: np.full((Z.shape[0], 1), var),
    )


def rbf_spec(d: int, log_signal: float = 0.0, inv_lengthscale: float = 1.0) -> KernelSpec:
    return KernelSpec(BaseKernel.RBF, KernelParams(log_signal, np.full(d, np.log(inv_lengthscale)), np.log(0.1)))


def fixed_model(X: np.ndarray, y: np.ndarray, noise: float = 1e-4, inv_lengthscale: float = 1.0) -> GpModel:
    """RBF GP with given hyperparameters, no training."""
    data = Dataset.from_arrays(X, y)
    return build_model(data, [rbf_spec(data.d, inv_lengthscale=inv_lengthscale)], [noise])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_model_1d():
    """1-d RBF GP whose posterior mean crosses 0 (standardized) near x = 1.5."""
    X = np.array([[-2.0], [-1.0], [0.0], [1.0], [3.0]])
    y = np.array([-2.0, -1.5, -1.0, -0.2, 2.0])
    return fixed_model(X, y, noise=1e-3, inv_lengthscale=0.25)


@pytest.fixture
def small_dataset(rng):
    X = rng.standard_normal((30, 3))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1] ** 2 + 0.01 * rng.standard_normal(30)
    return X, y
