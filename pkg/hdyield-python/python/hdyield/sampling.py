"""
Point generation in the unit cube and in the standard-normal variation space.

Process-variation parameters are independent standard normals, so every
reference set, pre-sample pool and initial design is produced here: Sobol and
Latin hypercube points in [0, 1)^d, mapped through the inverse normal CDF.
"""

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .exceptions import ShapeMismatchError, UnsupportedDimensionError

# scipy ships the Joe-Kuo "new-joe-kuo-6.21201" direction numbers.
SOBOL_MAX_DIMENSION = 21201

NORMAL_CLAMP_EPS = 1e-12
# Pre-sample pools start at one of this many consecutive runs of the sequence.
PRESAMPLE_WINDOWS = 256
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class Space(str, Enum):
    """Coordinate space a point set lives in."""

    UNIT_CUBE = "unit_cube"
    STANDARD_NORMAL = "standard_normal"


@dataclass(frozen=True)
class PointSet:
    """An ``n x d`` block of points tagged with the space they live in."""

    points: np.ndarray
    space: Space

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise ShapeMismatchError("PointSet.points", "an n x d matrix with n, d >= 1", points.shape)
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n


def _check_sizes(n: int, d: int) -> None:
    if n < 1 or d < 1:
        raise ShapeMismatchError("point set size", "n >= 1 and d >= 1", (n, d))


def sobol_points(n: int, d: int, skip: int = 0) -> PointSet:
    """
    First ``n`` unscrambled Sobol points in ``[0, 1)^d`` after skipping ``skip``.

    Index 0 of the sequence is the origin; standard-normal reference sets
    always pass ``skip >= 1``.
    """
    _check_sizes(n, d)
    if d > SOBOL_MAX_DIMENSION:
        raise UnsupportedDimensionError(d, SOBOL_MAX_DIMENSION)
    if skip < 0:
        raise ShapeMismatchError("sobol skip", ">= 0", skip)

    engine = qmc.Sobol(d=d, scramble=False)
    if skip:
        engine.fast_forward(skip)
    with warnings.catch_warnings():
        # Balance-property warning for non power-of-two n.
        warnings.simplefilter("ignore", category=UserWarning)
        points = engine.random(n)
    return PointSet(points, Space.UNIT_CUBE)


def lhs_points(n: int, d: int, rng_seed: int) -> PointSet:
    """Latin hypercube design: every coordinate has one point in each of ``n`` strata."""
    _check_sizes(n, d)
    engine = qmc.LatinHypercube(d=d, seed=np.random.default_rng(rng_seed))
    return PointSet(engine.random(n), Space.UNIT_CUBE)


def to_standard_normal(p: PointSet) -> PointSet:
    """Map unit-cube points through the inverse standard-normal CDF, elementwise."""
    if p.space is not Space.UNIT_CUBE:
        raise ValueError(f"to_standard_normal expects unit_cube points, got {p.space.value}")
    clamped = np.clip(p.points, NORMAL_CLAMP_EPS, 1.0 - NORMAL_CLAMP_EPS)
    return PointSet(ndtri(clamped), Space.STANDARD_NORMAL)


def log_density_standard_normal(x: np.ndarray) -> np.ndarray:
    """
    Log of the product of independent standard-normal densities.

    Accepts a single point of shape ``(d,)`` (returns a scalar) or a batch of
    shape ``(n, d)`` (returns ``(n,)``).
    """
    x = np.asarray(x, dtype=float)
    return np.sum(-0.5 * x * x - _LOG_SQRT_2PI, axis=-1)


def normal_reference_set(m: int, d: int, skip: int = 1) -> np.ndarray:
    """Quasi-MC standard-normal nodes: ``m`` Sobol points, origin skipped."""
    return to_standard_normal(sobol_points(m, d, skip=max(skip, 1))).points


def normal_reference_blocks(m: int, d: int, block: int, skip: int = 1) -> Iterator[np.ndarray]:
    """
    The same nodes as ``normal_reference_set(m, d, skip)``, yielded ``block`` rows at a time.

    One engine walks the sequence, so only a single block is ever held.
    """
    _check_sizes(m, d)
    if d > SOBOL_MAX_DIMENSION:
        raise UnsupportedDimensionError(d, SOBOL_MAX_DIMENSION)
    if block < 1:
        raise ShapeMismatchError("reference block", ">= 1", block)
    engine = qmc.Sobol(d=d, scramble=False)
    engine.fast_forward(max(skip, 1))
    for start in range(0, m, block):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=UserWarning)
            unit = engine.random(min(block, m - start))
        yield to_standard_normal(PointSet(unit, Space.UNIT_CUBE)).points


def presample_skip(t: int, rng_seed: int) -> int:
    """Sobol index where the size-``t`` pre-sample pool for ``rng_seed`` starts."""
    return 1 + t * int(np.random.default_rng(rng_seed).integers(PRESAMPLE_WINDOWS))


def presample_points(t: int, d: int, rng_seed: int) -> np.ndarray:
    """``t`` standard-normal Sobol candidates from a seeded window of the sequence."""
    return normal_reference_set(t, d, skip=presample_skip(t, rng_seed))


def normal_samples(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded pseudo-random standard-normal samples for plain Monte Carlo."""
    _check_sizes(n, d)
    return rng.standard_normal((n, d))
