"""
Synthetic testbenches standing in for a circuit simulator.

A testbench maps standard-normal process-variation vectors to performance
metrics through a pure, deterministic function that depends only on a sparse
set of active coordinates. Its failure threshold is calibrated against a
seeded brute-force Monte Carlo run so the oracle failure probability is known.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import ndtr, ndtri

from .acquisition import Thresholds
from .config import BenchKind, BenchSpec, Direction
from .exceptions import CalibrationError, ShapeMismatchError

logger = logging.getLogger(__name__)

MC_CHUNK = 1 << 18
CALIBRATION_STEPS = 50
CALIBRATION_REL_TOL = 0.1

SRAM_BASE_DELAY = 1.0
SRAM_TERM_SCALE = 0.1
SRAM_REGION_WIDTH = 1.0
SRAM_CENTER_RANGE = (3.0, 5.0)
SRAM_HEIGHT_RANGE = (1.0, 1.5)


@dataclass(frozen=True, eq=False)
class SramLikeMetric:
    """
    Read/write-delay-like metric: smooth per-dimension terms plus localized
    failure bumps, each acting on a pair of active coordinates.
    """

    active: np.ndarray
    linear: np.ndarray
    curvature: np.ndarray
    region_dims: np.ndarray
    centers: np.ndarray
    heights: np.ndarray
    base: float = SRAM_BASE_DELAY
    width: float = SRAM_REGION_WIDTH

    def __call__(self, X: np.ndarray) -> np.ndarray:
        Xa = X[:, self.active]
        t = np.tanh(Xa)
        f = self.base + SRAM_TERM_SCALE * (Xa @ self.linear + (t * t) @ self.curvature)
        for dims, center, height in zip(self.region_dims, self.centers, self.heights):
            diff = X[:, dims] - center
            f = f + height * np.exp(-np.sum(diff * diff, axis=1) / (2.0 * self.width ** 2))
        return f[:, None]


@dataclass(frozen=True, eq=False)
class QuadraticMetric:
    active: np.ndarray
    weights: np.ndarray
    base: float = 1.0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        Xa = X[:, self.active]
        return (self.base + (Xa * Xa) @ self.weights)[:, None]


@dataclass(frozen=True)
class LinearTailMetric:
    coordinate: int = 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return X[:, [self.coordinate]].astype(float)


@dataclass(frozen=True)
class Testbench:
    """A pure metric function over the variation space with its failure thresholds."""

    __test__ = False

    name: str
    dimension: int
    active_dims: Tuple[int, ...]
    metric_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    thresholds: Thresholds = field(repr=False)
    oracle_pf: Optional[float] = None
    oracle_se: Optional[float] = None
    spec: Optional[BenchSpec] = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.thresholds.k

    def eval(self, X: np.ndarray) -> np.ndarray:
        """Metric matrix ``(N, K)`` for the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dimension:
            raise ShapeMismatchError(f"{self.name} inputs", self.dimension, X.shape[1])
        Y = np.asarray(self.metric_fn(X), dtype=float)
        return Y[:, None] if Y.ndim == 1 else Y

    def failed(self, X: np.ndarray) -> np.ndarray:
        return self.thresholds.violated(self.eval(X))

    def with_threshold(self, z0: float) -> "Testbench":
        """Same function with a new single-metric threshold; the oracle is cleared."""
        thresholds = Thresholds(np.array([z0]), self.thresholds.directions[:1])
        spec = self.spec.model_copy(update={"threshold": float(z0), "oracle_pf": None, "oracle_se": None}) if self.spec else None
        return replace(self, thresholds=thresholds, oracle_pf=None, oracle_se=None, spec=spec)

    def to_spec(self) -> BenchSpec:
        """Serializable description including the calibrated threshold and oracle."""
        if self.spec is None:
            raise ValueError(f"bench '{self.name}' was not built from a BenchSpec")
        return self.spec.model_copy(update={
            "threshold": float(self.thresholds.z0[0]),
            "oracle_pf": self.oracle_pf,
            "oracle_se": self.oracle_se,
        })


def _chunks(n: int):
    start = 0
    while start < n:
        size = min(MC_CHUNK, n - start)
        yield size
        start += size


def _metric_sample(metric_fn: Callable[[np.ndarray], np.ndarray], dimension: int, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    values = np.empty(n)
    offset = 0
    for size in _chunks(n):
        values[offset:offset + size] = np.asarray(metric_fn(rng.standard_normal((size, dimension))))[:, 0]
        offset += size
    return values


def mc_oracle(bench: Testbench, n: int, seed: int) -> Tuple[float, float]:
    """Seeded brute-force failure fraction and its binomial standard error."""
    if n < 1:
        raise ValueError(f"mc_oracle needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    failures = 0
    for size in _chunks(n):
        failures += int(np.count_nonzero(bench.failed(rng.standard_normal((size, bench.dimension)))))
    pf = failures / n
    return pf, float(np.sqrt(pf * (1.0 - pf) / n))


def calibrate_threshold(
    metric_fn: Callable[[np.ndarray], np.ndarray],
    dimension: int,
    target_pf: float,
    n: int,
    seed: int,
    direction: Direction = Direction.FAIL_IF_GREATER,
) -> Tuple[float, float, float]:
    """
    Bisect the threshold until the MC failure fraction is within 10% of ``target_pf``.

    Returns ``(z0, pf, se)`` where ``pf`` is the failure fraction of the same
    seeded sample that :func:`mc_oracle` draws.
    """
    signed = np.sort(direction.sign * _metric_sample(metric_fn, dimension, n, seed))
    lo, hi = float(signed[0]), float(signed[-1])
    for step in range(CALIBRATION_STEPS):
        mid = 0.5 * (lo + hi)
        pf = (n - np.searchsorted(signed, mid, side="right")) / n
        if pf > 0.0 and abs(pf - target_pf) / target_pf < CALIBRATION_REL_TOL:
            logger.debug(f"calibrated after {step + 1} bisection steps: pf={pf:.4e}")
            return direction.sign * mid, float(pf), float(np.sqrt(pf * (1.0 - pf) / n))
        if pf > target_pf:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"could not reach failure rate {target_pf:.3e} within {CALIBRATION_REL_TOL:.0%} "
        f"after {CALIBRATION_STEPS} bisection steps with {n} samples"
    )


def _sram_metric(dimension: int, n_active: int, n_failure_regions: int, seed: int) -> SramLikeMetric:
    rng = np.random.default_rng(seed)
    active = np.sort(rng.choice(dimension, size=n_active, replace=False))
    linear = rng.standard_normal(n_active)
    curvature = rng.standard_normal(n_active)
    pair = min(2, n_active)
    region_dims = np.array(
        [np.sort(rng.choice(active, size=pair, replace=False)) for _ in range(n_failure_regions)], dtype=int
    ).reshape(n_failure_regions, pair)
    magnitudes = rng.uniform(*SRAM_CENTER_RANGE, size=(n_failure_regions, pair))
    signs = rng.choice((-1.0, 1.0), size=(n_failure_regions, pair))
    heights = rng.uniform(*SRAM_HEIGHT_RANGE, size=n_failure_regions)
    return SramLikeMetric(active, linear, curvature, region_dims, magnitudes * signs, heights)


def make_sram_like(
    dimension: int,
    n_active: int,
    n_failure_regions: int,
    target_pf: float,
    seed: int,
    calibration_samples: int = 10_000_000,
    name: Optional[str] = None,
    direction: Direction = Direction.FAIL_IF_GREATER,
) -> Testbench:
    """Sparse high-dimensional delay emulation calibrated to ``target_pf``."""
    spec = BenchSpec(
        name=name or f"sram_like_d{dimension}",
        kind=BenchKind.SRAM_LIKE,
        dimension=dimension,
        n_active=n_active,
        n_failure_regions=n_failure_regions,
        target_pf=target_pf,
        seed=seed,
        calibration_samples=calibration_samples,
        direction=direction,
    )
    return build_bench(spec)


def make_quadratic(
    dimension: int, n_active: int, target_pf: float, seed: int, calibration_samples: int = 10_000_000
) -> Testbench:
    return build_bench(BenchSpec(
        name=f"quadratic_d{dimension}", kind=BenchKind.QUADRATIC, dimension=dimension,
        n_active=n_active, n_failure_regions=0, target_pf=target_pf, seed=seed,
        calibration_samples=calibration_samples,
    ))


def make_linear_tail(
    dimension: int = 1, target_pf: Optional[float] = None, threshold: Optional[float] = None
) -> Testbench:
    """``f(x) = x_0``; fails past a threshold with exactly known tail probability."""
    if (target_pf is None) == (threshold is None):
        raise ValueError("give exactly one of target_pf or threshold")
    z0 = float(ndtri(1.0 - target_pf)) if threshold is None else float(threshold)
    pf = float(ndtr(-z0))
    spec = BenchSpec(
        name=f"linear_tail_d{dimension}", kind=BenchKind.LINEAR_TAIL, dimension=dimension, n_active=1,
        n_failure_regions=0, target_pf=pf if 0.0 < pf < 1.0 else 0.5, seed=0, threshold=z0,
        oracle_pf=pf, oracle_se=0.0,
    )
    return build_bench(spec)


def build_bench(spec: BenchSpec) -> Testbench:
    """
    Rebuild a bench from its spec; calibrate only when no threshold is stored.

    The function is a deterministic consequence of ``(kind, dimension, n_active,
    n_failure_regions, seed)`` so a cached spec reproduces the same bench.
    """
    if spec.kind is BenchKind.SRAM_LIKE:
        metric: Callable[[np.ndarray], np.ndarray] = _sram_metric(spec.dimension, spec.n_active, spec.n_failure_regions, spec.seed)
        active = tuple(int(i) for i in metric.active)
    elif spec.kind is BenchKind.QUADRATIC:
        rng = np.random.default_rng(spec.seed)
        active_arr = np.sort(rng.choice(spec.dimension, size=spec.n_active, replace=False))
        metric = QuadraticMetric(active_arr, rng.uniform(0.5, 1.5, size=spec.n_active))
        active = tuple(int(i) for i in active_arr)
    else:
        metric = LinearTailMetric(0)
        active = (0,)
        if spec.threshold is None:
            z0 = float(ndtri(1.0 - spec.target_pf))
            spec = spec.model_copy(update={"threshold": z0, "oracle_pf": float(ndtr(-z0)), "oracle_se": 0.0})

    if spec.threshold is None:
        logger.info(f"Calibrating '{spec.name}' to Pf={spec.target_pf:.1e} with {spec.calibration_samples:,} MC samples")
        z0, pf, se = calibrate_threshold(
            metric, spec.dimension, spec.target_pf, spec.calibration_samples, spec.seed, spec.direction
        )
        spec = spec.model_copy(update={"threshold": z0, "oracle_pf": pf, "oracle_se": se})

    return Testbench(
        name=spec.name,
        dimension=spec.dimension,
        active_dims=active,
        metric_fn=metric,
        thresholds=Thresholds.single(spec.threshold, spec.direction),
        oracle_pf=spec.oracle_pf,
        oracle_se=spec.oracle_se,
        spec=spec,
    )
