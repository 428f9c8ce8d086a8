"""
Feature selection for the surrogate's input space.

HSIC-Lasso picks the variation parameters whose centered Gaussian Grams best
reconstruct the output Gram under a non-negative L1 penalty. A linear LASSO
baseline and reference selectors (factor analysis, PCA, mutual information,
random embedding) exist for the ablation harness.

Every selector returns a :class:`FeatureMap`: either a column subset of the
variation space or a linear projection of it.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import pdist
from sklearn.decomposition import PCA, FactorAnalysis
from sklearn.feature_selection import mutual_info_regression

from .config import SelectorKind
from .exceptions import SelectionError

logger = logging.getLogger(__name__)

CD_TOLERANCE = 1e-6
CD_MAX_SWEEPS = 1000
LAMBDA_MIN = 1e-6
LAMBDA_BISECTION_STEPS = 50

# Above this many stored Gram entries (dims * vectorized length) the solver
# switches to block Grams.
EXACT_GRAM_MAX_ENTRIES = 50_000_000
DEFAULT_BLOCK_SIZE = 20
DEFAULT_PERMUTATIONS = 3


@dataclass(frozen=True)
class FeatureWeights:
    """Importance per input dimension, the penalty used and the ranked selection."""

    alpha: np.ndarray
    selected: Tuple[int, ...]
    lam: float
    objective_history: Tuple[float, ...] = ()

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.alpha))


@dataclass(frozen=True)
class CenteredGram:
    """Double-centered, Frobenius-normalized Gaussian Gram matrix of one variable."""

    matrix: np.ndarray
    bandwidth: float


@dataclass(frozen=True)
class FeatureMap:
    """
    Map from the D-dimensional variation space into the surrogate's inputs.

    Column maps keep ``columns``; projection maps apply ``(x - offset) @ matrix``.
    """

    dimension: int
    columns: Optional[Tuple[int, ...]] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    offset: Optional[np.ndarray] = field(default=None, repr=False)
    kind: str = "columns"

    def __post_init__(self) -> None:
        if (self.columns is None) == (self.matrix is None):
            raise SelectionError("FeatureMap needs exactly one of columns or matrix")
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))
            if any(c < 0 or c >= self.dimension for c in self.columns):
                raise SelectionError(f"column index out of range for dimension {self.dimension}")
        elif self.matrix.shape[0] != self.dimension:
            raise SelectionError(f"projection has {self.matrix.shape[0]} rows, expected {self.dimension}")

    @classmethod
    def identity(cls, dimension: int) -> "FeatureMap":
        return cls(dimension, columns=tuple(range(dimension)), kind="none")

    @property
    def output_dim(self) -> int:
        return len(self.columns) if self.columns is not None else self.matrix.shape[1]

    @property
    def input_mask(self) -> np.ndarray:
        """Variation coordinates the mapped inputs depend on."""
        if self.columns is None:
            return np.ones(self.dimension, dtype=bool)
        mask = np.zeros(self.dimension, dtype=bool)
        mask[list(self.columns)] = True
        return mask

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dimension:
            raise SelectionError(f"points have {X.shape[1]} columns, feature map expects {self.dimension}")
        if self.columns is not None:
            return X[:, list(self.columns)]
        offset = self.offset if self.offset is not None else 0.0
        return (X - offset) @ self.matrix

    def pullback(self, grad: np.ndarray) -> np.ndarray:
        """Chain a gradient with respect to mapped inputs back to the variation space."""
        grad = np.asarray(grad, dtype=float)
        if self.columns is not None:
            out = np.zeros(grad.shape[:-1] + (self.dimension,))
            out[..., list(self.columns)] = grad
            return out
        return grad @ self.matrix.T

    def same_as(self, other: Optional["FeatureMap"]) -> bool:
        if other is None or other.dimension != self.dimension or other.kind != self.kind:
            return False
        if self.columns is not None:
            return self.columns == other.columns
        return other.matrix is not None and np.array_equal(self.matrix, other.matrix)


# ----------------------------------------------------------------------------
# Grams
# ----------------------------------------------------------------------------


def median_bandwidth(values: np.ndarray) -> float:
    """Median of the nonzero pairwise absolute differences; 1.0 for a constant input."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        return 1.0
    dists = pdist(values[:, None], metric="cityblock")
    dists = dists[dists > 0.0]
    if dists.size == 0:
        return 1.0
    return float(np.median(dists))


def _gaussian_gram(values: np.ndarray, bandwidth: float) -> np.ndarray:
    diff = values[:, None] - values[None, :]
    return np.exp(-(diff * diff) / (2.0 * bandwidth * bandwidth))


def _double_center(G: np.ndarray) -> np.ndarray:
    return G - G.mean(axis=0, keepdims=True) - G.mean(axis=1, keepdims=True) + G.mean()


def _normalize(A: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(A)
    return A / norm if norm > 0.0 else np.zeros_like(A)


def centered_gram(values: np.ndarray, bandwidth: float) -> CenteredGram:
    """H G H / ||H G H||_F for the Gaussian Gram of ``values``."""
    if bandwidth <= 0.0:
        raise SelectionError(f"bandwidth must be positive, got {bandwidth}")
    values = np.asarray(values, dtype=float).ravel()
    return CenteredGram(_normalize(_double_center(_gaussian_gram(values, bandwidth))), float(bandwidth))


def _block_permutations(n: int, block_size: int, n_permutations: int, seed: int) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    usable = (n // block_size) * block_size
    return [rng.permutation(n)[:usable].reshape(-1, block_size) for _ in range(n_permutations)]


def _vectorized_gram(values: np.ndarray, blocks: Optional[List[np.ndarray]]) -> np.ndarray:
    """Flattened centered Gram, exact or concatenated over sample blocks, unit norm."""
    bandwidth = median_bandwidth(values)
    if blocks is None:
        return _double_center(_gaussian_gram(values, bandwidth)).ravel()
    parts = []
    for perm in blocks:
        sub = values[perm]
        diff = sub[:, :, None] - sub[:, None, :]
        G = np.exp(-(diff * diff) / (2.0 * bandwidth * bandwidth))
        G = G - G.mean(axis=1, keepdims=True) - G.mean(axis=2, keepdims=True) + G.mean(axis=(1, 2), keepdims=True)
        parts.append(G.ravel())
    return np.concatenate(parts)


def _gram_columns(
    X: np.ndarray, blocks: Optional[List[np.ndarray]], threads: int
) -> np.ndarray:
    columns = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_vectorized_gram)(X[:, d], blocks) for d in range(X.shape[1])
    )
    Phi = np.column_stack(columns)
    norms = np.linalg.norm(Phi, axis=0)
    return np.divide(Phi, norms, out=np.zeros_like(Phi), where=norms > 0.0)


# ----------------------------------------------------------------------------
# Coordinate descent
# ----------------------------------------------------------------------------


def coordinate_descent(
    gram: np.ndarray,
    corr: np.ndarray,
    lam: float,
    nonnegative: bool,
    alpha0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, List[float]]:
    """
    Cyclic coordinate descent on ``1/2 a^T Q a - b^T a + lam ||a||_1``.

    Stops when the largest coordinate change is below ``CD_TOLERANCE`` or
    after ``CD_MAX_SWEEPS`` sweeps. Returns the solution and the objective
    after every sweep.
    """
    d = corr.size
    alpha = np.zeros(d) if alpha0 is None else np.array(alpha0, dtype=float)
    diag = np.diag(gram).copy()
    residual_corr = corr - gram @ alpha

    def objective(a: np.ndarray) -> float:
        return float(0.5 * a @ gram @ a - corr @ a + lam * np.sum(np.abs(a)))

    history = [objective(alpha)]
    for _ in range(CD_MAX_SWEEPS):
        max_change = 0.0
        for j in range(d):
            if diag[j] <= 0.0:
                new = 0.0
            else:
                rho = residual_corr[j] + diag[j] * alpha[j]
                if nonnegative:
                    new = max(rho - lam, 0.0) / diag[j]
                else:
                    new = np.sign(rho) * max(abs(rho) - lam, 0.0) / diag[j]
            delta = new - alpha[j]
            if delta != 0.0:
                residual_corr -= gram[:, j] * delta
                alpha[j] = new
                max_change = max(max_change, abs(delta))
        history.append(objective(alpha))
        if max_change < CD_TOLERANCE:
            break
    else:
        logger.warning(f"Coordinate descent hit {CD_MAX_SWEEPS} sweeps without converging")
    return alpha, history


def _check_finite(X: np.ndarray, y: np.ndarray) -> None:
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SelectionError("feature selection inputs contain NaN or infinite values")


def _subsample(X: np.ndarray, y: np.ndarray, max_rows: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    if X.shape[0] <= max_rows:
        return X, y
    rows = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=max_rows, replace=False))
    return X[rows], y[rows]


@dataclass
class HsicProblem:
    """The reduced quadratic form ``Q = Phi^T Phi``, ``b = Phi^T l`` of an HSIC-Lasso fit."""

    gram: np.ndarray
    corr: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(max(np.max(self.corr), 0.0))

    def solve(self, lam: float) -> Tuple[np.ndarray, List[float]]:
        return coordinate_descent(self.gram, self.corr, lam, nonnegative=True)


def build_hsic_problem(
    X: np.ndarray,
    y: np.ndarray,
    max_rows: int = 2000,
    block_size: Optional[int] = None,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    threads: int = 1,
) -> HsicProblem:
    """
    Assemble the HSIC-Lasso quadratic form.

    ``block_size=None`` uses exact N x N Grams while they fit in
    ``EXACT_GRAM_MAX_ENTRIES``, otherwise block Grams of ``DEFAULT_BLOCK_SIZE``.
    Several metrics contribute one output Gram each; their objectives are averaged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    Y = y[:, None] if y.ndim == 1 else y
    if Y.shape[0] != X.shape[0]:
        raise SelectionError(f"X has {X.shape[0]} rows but y has {Y.shape[0]}")
    _check_finite(X, Y)
    X, Y = _subsample(X, Y, max_rows, seed)
    n, d = X.shape

    if block_size is None and d * n * n > EXACT_GRAM_MAX_ENTRIES:
        block_size = DEFAULT_BLOCK_SIZE
    blocks = None
    if block_size is not None:
        if block_size < 2 or block_size > n:
            raise SelectionError(f"block_size must be in [2, {n}], got {block_size}")
        blocks = _block_permutations(n, block_size, n_permutations, seed)
        logger.debug(f"HSIC-Lasso using block Grams (B={block_size}, {n_permutations} permutations)")

    Phi = _gram_columns(X, blocks, threads)
    std = Y.std(axis=0)
    Ys = (Y - Y.mean(axis=0)) / np.where(std > 0.0, std, 1.0)
    gram = Phi.T @ Phi
    corr = np.zeros(d)
    for k in range(Ys.shape[1]):
        ell = _vectorized_gram(Ys[:, k], blocks)
        norm = np.linalg.norm(ell)
        if norm > 0.0:
            corr += Phi.T @ (ell / norm)
    return HsicProblem(gram, corr / Ys.shape[1])


def hsic_lasso(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    max_rows: int = 2000,
    block_size: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> FeatureWeights:
    """Non-negative HSIC-Lasso weights for a fixed penalty ``lam``."""
    if lam < 0.0:
        raise SelectionError(f"lambda must be non-negative, got {lam}")
    problem = build_hsic_problem(X, y, max_rows=max_rows, block_size=block_size, seed=seed, threads=threads)
    alpha, history = problem.solve(lam)
    return FeatureWeights(alpha, _rank(alpha), float(lam), tuple(history))


def hsic_lasso_for_count(
    X: np.ndarray,
    y: np.ndarray,
    m: int,
    max_rows: int = 2000,
    block_size: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> FeatureWeights:
    """Bisect lambda on a log scale until about ``m`` weights are nonzero."""
    problem = build_hsic_problem(X, y, max_rows=max_rows, block_size=block_size, seed=seed, threads=threads)
    d = problem.corr.size
    if not 1 <= m <= d:
        raise SelectionError(f"m={m} must be in [1, {d}]")
    lam_max = problem.lambda_max
    if lam_max <= LAMBDA_MIN:
        logger.warning("No input dimension carries positive HSIC with the output")
        alpha, history = problem.solve(LAMBDA_MIN)
        return FeatureWeights(alpha, _rank(alpha), LAMBDA_MIN, tuple(history))

    lo, hi = np.log(LAMBDA_MIN), np.log(lam_max)
    best: Optional[Tuple[int, float, np.ndarray, List[float]]] = None
    for _ in range(LAMBDA_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        lam = float(np.exp(mid))
        alpha, history = problem.solve(lam)
        nnz = int(np.count_nonzero(alpha))
        if best is None or abs(nnz - m) < best[0] or (abs(nnz - m) == best[0] and nnz >= m):
            best = (abs(nnz - m), lam, alpha, history)
        if abs(nnz - m) <= 0.1 * m:
            break
        if nnz > m:
            lo = mid
        else:
            hi = mid
    _, lam, alpha, history = best
    logger.debug(f"HSIC-Lasso lambda={lam:.3e} keeps {np.count_nonzero(alpha)} of {d} dims (target {m})")
    return FeatureWeights(alpha, _rank(alpha), lam, tuple(history))


def lasso_baseline(
    X: np.ndarray, y: np.ndarray, lam: float, standardize: bool = True
) -> np.ndarray:
    """
    Signed linear LASSO weights minimizing ``1/2 ||y - X a||^2 + lam ||a||_1``.

    With ``standardize`` the columns are centered and scaled to unit variance
    (y centered) and the weights refer to that scale; constant columns get 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    _check_finite(X, y)
    if lam < 0.0:
        raise SelectionError(f"lambda must be non-negative, got {lam}")
    if standardize:
        X, y = _standardize_columns(X), y - y.mean()
    alpha, _ = coordinate_descent(X.T @ X, X.T @ y, lam, nonnegative=False)
    return alpha


def _standardize_columns(X: np.ndarray) -> np.ndarray:
    std = X.std(axis=0)
    return np.divide(X - X.mean(axis=0), std, out=np.zeros_like(X), where=std > 0.0)


def _rank(alpha: np.ndarray) -> Tuple[int, ...]:
    # Stable sort on -alpha breaks ties by lower index.
    return tuple(int(i) for i in np.argsort(-alpha, kind="stable") if alpha[i] > 0.0)


def select_top(weights: FeatureWeights, m: int) -> List[int]:
    """Indices of the ``m`` largest weights, padded with the largest remaining ones if needed."""
    alpha = np.asarray(weights.alpha, dtype=float)
    if not 1 <= m <= alpha.size:
        raise SelectionError(f"m={m} must be in [1, {alpha.size}]")
    order = [int(i) for i in np.argsort(-alpha, kind="stable")]
    if np.count_nonzero(alpha) < m:
        logger.warning(f"Only {np.count_nonzero(alpha)} nonzero weights; padding selection to {m}")
    return order[:m]


# ----------------------------------------------------------------------------
# Reference selectors
# ----------------------------------------------------------------------------


def _first_metric(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y if y.ndim == 1 else y[:, 0]


def select_features(
    kind: SelectorKind,
    X: np.ndarray,
    y: np.ndarray,
    m: int,
    seed: int = 0,
    max_rows: int = 2000,
    threads: int = 1,
) -> Tuple[FeatureMap, np.ndarray]:
    """
    Run one selector and return its feature map with per-dimension weights.

    Projection selectors report the row norms of their projection as weights.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    kind = SelectorKind(kind)
    if not 1 <= m <= d:
        raise SelectionError(f"m={m} must be in [1, {d}]")
    _check_finite(X, np.asarray(y, dtype=float))

    if kind is SelectorKind.NONE:
        return FeatureMap.identity(d), np.ones(d)

    if kind is SelectorKind.HSIC_LASSO:
        weights = hsic_lasso_for_count(X, y, m, max_rows=max_rows, seed=seed, threads=threads)
        return FeatureMap(d, columns=tuple(select_top(weights, m)), kind=kind.value), weights.alpha

    if kind is SelectorKind.LASSO:
        target = _first_metric(y)
        Xs, ys = _subsample(X, target, max_rows, seed)
        lam = 0.01 * float(np.max(np.abs(_standardize_columns(Xs).T @ (ys - ys.mean()))))
        alpha = np.abs(lasso_baseline(Xs, ys, lam))
        fw = FeatureWeights(alpha, _rank(alpha), lam)
        return FeatureMap(d, columns=tuple(select_top(fw, m)), kind=kind.value), alpha

    if kind is SelectorKind.MI:
        target = _first_metric(y)
        Xs, ys = _subsample(X, target, max_rows, seed)
        alpha = mutual_info_regression(Xs, ys, random_state=seed)
        fw = FeatureWeights(alpha, _rank(alpha), 0.0)
        return FeatureMap(d, columns=tuple(select_top(fw, m)), kind=kind.value), alpha

    # Centered data of n rows spans at most n - 1 directions.
    rank = max(X.shape[0] - 1, 1)
    if kind in (SelectorKind.PCA, SelectorKind.FA) and m > rank:
        logger.warning(f"{kind.value} can extract at most {rank} components from {X.shape[0]} rows; m={m} reduced")
        m = rank

    if kind is SelectorKind.PCA:
        pca = PCA(n_components=m, random_state=seed).fit(X)
        matrix = pca.components_.T
        return FeatureMap(d, matrix=matrix, offset=pca.mean_.copy(), kind=kind.value), np.linalg.norm(matrix, axis=1)

    if kind is SelectorKind.FA:
        fa = FactorAnalysis(n_components=m, random_state=seed).fit(X)
        # Least-squares factor scores: (x - mean) W^T (W W^T)^{-1}.
        W = fa.components_
        matrix = W.T @ np.linalg.pinv(W @ W.T)
        return FeatureMap(d, matrix=matrix, offset=fa.mean_.copy(), kind=kind.value), np.linalg.norm(W, axis=0)

    if kind is SelectorKind.RANDOM_EMBEDDING:
        rng = np.random.default_rng(seed)
        matrix = rng.standard_normal((d, m)) / np.sqrt(m)
        return FeatureMap(d, matrix=matrix, kind=kind.value), np.linalg.norm(matrix, axis=1)

    raise SelectionError(f"unsupported selector '{kind.value}'")
