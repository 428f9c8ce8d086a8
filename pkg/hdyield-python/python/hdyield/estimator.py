"""
The yield estimation loop and its comparators.

``run_yield_estimation`` drives the full sequential scheme: an initial design
seeded with tail shell points, feature selection, surrogate fitting, batch
acquisition and a figure-of-merit stopping rule. Plain Monte Carlo and the
EI/PI/UCB acquisitions are kept alongside for the ablation runs.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .acquisition import ReferenceSet, Thresholds, YieldPosterior, integral_entropy, likelihood_field
from .batch import propose_batch
from .config import AcquisitionKind, FomVariance, RunConfig, SelectorKind, TrainConfig
from .exceptions import ConfigurationError, ShapeMismatchError
from .sampling import lhs_points, normal_reference_blocks, presample_points, to_standard_normal
from .shrinkage import FeatureMap, select_features
from .surrogate import Dataset, GpModel, gp_fit, predict_batch
from .testbench import MC_CHUNK, Testbench
from .trace import BatchRow, RunTrace, YieldEstimate

logger = logging.getLogger(__name__)

DEFAULT_UCB_KAPPA = 2.0
_CHUNK = 8192
_NORM_PDF = 1.0 / math.sqrt(2.0 * math.pi)


# ----------------------------------------------------------------------------
# Estimates
# ----------------------------------------------------------------------------


def figure_of_merit(pf_mean: float, pf_variance: float) -> float:
    """rho = sigma / mean; +inf while the mean is not positive."""
    if pf_mean <= 0.0:
        return math.inf
    return math.sqrt(max(pf_variance, 0.0)) / pf_mean


def plugin_yield(model: GpModel, thresholds: Thresholds, ref: ReferenceSet) -> float:
    """Fraction of reference points whose posterior mean violates every threshold."""
    failed = 0
    for start in range(0, ref.m, _CHUNK):
        Z = model.project(ref.points[start:start + _CHUNK])
        mean = model.predict_mean(Z)
        failed += int(np.count_nonzero(thresholds.violated(mean)))
    return failed / ref.m


def estimation_moments(
    model: GpModel, thresholds: Thresholds, size: int, dimension: int, block: int = _CHUNK
) -> Tuple[YieldPosterior, float]:
    """
    Yield posterior and plug-in estimate over the first ``size`` standard-normal Sobol nodes.

    Nodes are generated and discarded block by block, so memory stays at
    ``block * dimension`` however large ``size`` is.
    """
    l_sum = 0.0
    var_sum = 0.0
    failed = 0
    for X in normal_reference_blocks(size, dimension, block):
        l = likelihood_field(model, thresholds, X, prune=True)
        l_sum += float(np.sum(l))
        var_sum += float(np.sum(l * (1.0 - l)))
        failed += int(np.count_nonzero(thresholds.violated(model.predict_mean(model.project(X)))))
    return YieldPosterior(l_sum / size, var_sum / size), failed / size


def mc_required_samples(pf: float, rho0: float) -> float:
    """Plain Monte Carlo sample count for a relative standard error of ``rho0``."""
    if pf <= 0.0:
        return math.inf
    return (1.0 - pf) / (pf * rho0 * rho0)


# ----------------------------------------------------------------------------
# Comparator acquisitions
# ----------------------------------------------------------------------------


def comparator_scores(
    mean: np.ndarray,
    var: np.ndarray,
    thresholds: Thresholds,
    kind: AcquisitionKind,
    kappa: float = DEFAULT_UCB_KAPPA,
) -> np.ndarray:
    """
    EI/PI/UCB of crossing the threshold, for ``(M, K)`` posterior moments.

    Scores are oriented so that larger means closer to failing: ``s (mu - z0)``
    with ``s`` the metric's direction sign. PI multiplies the per-metric
    crossing probabilities; EI and UCB take the least favorable metric.
    """
    kind = AcquisitionKind(kind)
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    var = np.atleast_2d(np.asarray(var, dtype=float))
    if mean.shape[1] != thresholds.k:
        raise ShapeMismatchError("posterior metrics", thresholds.k, mean.shape[1])
    std = np.sqrt(np.maximum(var, 0.0))
    signed = thresholds.signs * mean
    excess = thresholds.signs * (mean - thresholds.z0)

    if kind is AcquisitionKind.UCB:
        return np.min(signed + kappa * std, axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(std > 0.0, excess / np.where(std > 0.0, std, 1.0), np.sign(excess) * np.inf)
    u = np.where((std == 0.0) & (excess == 0.0), 0.0, u)

    if kind is AcquisitionKind.PI:
        return np.prod(ndtr(u), axis=1)
    if kind is AcquisitionKind.EI:
        finite = np.isfinite(u)
        u_safe = np.where(finite, u, 0.0)
        ei = np.where(
            finite,
            std * (u_safe * ndtr(u_safe) + _NORM_PDF * np.exp(-0.5 * u_safe * u_safe)),
            np.maximum(excess, 0.0),
        )
        return np.min(ei, axis=1)
    raise ConfigurationError(f"'{kind.value}' is not a comparator acquisition", key_path="run.acquisition")


def comparator_acquisition(
    model: GpModel,
    kind: AcquisitionKind,
    thresholds: Thresholds,
    x: np.ndarray,
    kappa: float = DEFAULT_UCB_KAPPA,
) -> float:
    """Closed-form EI, PI or UCB at a single variation point."""
    mean, var = model.predict(model.project(np.asarray(x, dtype=float)))
    return float(comparator_scores(mean, var, thresholds, kind, kappa)[0])


def comparator_batch(
    model: GpModel,
    thresholds: Thresholds,
    kind: AcquisitionKind,
    q: int,
    presamples: np.ndarray,
    kappa: float = DEFAULT_UCB_KAPPA,
) -> np.ndarray:
    """Top-``q`` pre-samples by comparator score."""
    mean, var = predict_batch(model, model.project(presamples))
    scores = comparator_scores(mean, var, thresholds, kind, kappa)
    order = np.argsort(-scores, kind="stable")[:q]
    return presamples[np.sort(order)]


# ----------------------------------------------------------------------------
# Initial design
# ----------------------------------------------------------------------------


def initial_design(
    n: int, d: int, seed: int, shell_fraction: float = 0.1, shell_radii: Sequence[float] = (3.0, 4.0, 5.0)
) -> np.ndarray:
    """
    LHS mapped to the standard normal plus points on tail shells.

    A shell point is ``r * sqrt(d) * g / |g|`` for a Gaussian direction ``g``,
    so its root-mean-square coordinate is ``r``. Radii cycle through
    ``shell_radii``.
    """
    n_shell = int(round(shell_fraction * n)) if shell_radii else 0
    n_shell = min(n_shell, n - 1)
    X = to_standard_normal(lhs_points(n - n_shell, d, seed)).points
    if n_shell == 0:
        return np.array(X)
    rng = np.random.default_rng(seed + 1)
    g = rng.standard_normal((n_shell, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radii = np.resize(np.asarray(shell_radii, dtype=float), n_shell)
    return np.vstack([X, g * (radii * math.sqrt(d))[:, None]])


# ----------------------------------------------------------------------------
# Main loop
# ----------------------------------------------------------------------------


@dataclass
class YieldEstimator:
    """
    State of one estimation run.

    After :meth:`run` the final dataset, model, feature map and selection
    weights stay available for checkpointing.
    """

    cfg: RunConfig
    bench: Testbench
    threads: int = 1
    on_estimate: Optional[Callable[[YieldEstimate], None]] = None

    data: Optional[Dataset] = field(default=None, init=False)
    model: Optional[GpModel] = field(default=None, init=False)
    feature_map: Optional[FeatureMap] = field(default=None, init=False)
    alpha: Optional[np.ndarray] = field(default=None, init=False)
    trace: RunTrace = field(default_factory=RunTrace, init=False)

    def __post_init__(self) -> None:
        if self.cfg.m_features is None:
            self.cfg = self.cfg.model_copy(update={"m_features": min(self.bench.dimension, 20)})
        if self.cfg.m_features > self.bench.dimension:
            raise ConfigurationError(
                f"m_features={self.cfg.m_features} exceeds bench dimension {self.bench.dimension}",
                key_path="run.m_features",
            )
        self._failure_seen = False

    @property
    def dimension(self) -> int:
        return self.bench.dimension

    def _select(self, iteration: int) -> None:
        self.feature_map, self.alpha = select_features(
            self.cfg.selector,
            self.data.X,
            self.data.Y,
            self.cfg.m_features,
            seed=self.cfg.seeds.selection + iteration,
            max_rows=self.cfg.hsic_max_rows,
            threads=self.threads,
        )
        logger.debug(f"selected {self.feature_map.output_dim} features ({self.feature_map.kind})")

    def _fit(self, warm: bool) -> None:
        self.model = gp_fit(
            self.data.mapped(self.feature_map),
            self.cfg.train,
            self.feature_map,
            warm_start=self.model if warm else None,
            seed=self.cfg.seeds.training,
        )

    def _observe(self, X: np.ndarray) -> None:
        Y = self.bench.eval(X)
        self._failure_seen = self._failure_seen or bool(np.any(self.bench.thresholds.violated(Y)))
        self.data = Dataset.from_arrays(X, Y) if self.data is None else self.data.extend(X, Y)

    def _record(self, iteration: int, started: float) -> YieldEstimate:
        thresholds = self.bench.thresholds.for_model(self.model)
        posterior, plugin = estimation_moments(self.model, thresholds, self.cfg.estimation_size, self.dimension)
        variance = posterior.variance
        if self.cfg.fom_variance is FomVariance.POISSON_BINOMIAL:
            variance /= self.cfg.estimation_size
        acq_ref = self._acquisition_ref(iteration)
        estimate = YieldEstimate(
            iteration=iteration,
            n_simulations=self.data.n,
            pf_mean=posterior.mean,
            pf_variance=variance,
            pf_plugin=plugin,
            rho=figure_of_merit(posterior.mean, variance),
            ih=integral_entropy(self.model, thresholds, acq_ref),
            wall_ms=(time.perf_counter() - started) * 1000.0,
        )
        self.trace.append(estimate)
        logger.info(
            f"iteration {iteration}: n_sim={estimate.n_simulations} pf_mean={estimate.pf_mean:.4e} "
            f"rho={estimate.rho:.4f} ih={estimate.ih:.4e}"
        )
        if self.on_estimate is not None:
            self.on_estimate(estimate)
        return estimate

    def _acquisition_ref(self, iteration: int) -> ReferenceSet:
        return ReferenceSet.sobol(
            self.cfg.reference_size, self.dimension, iteration, offset=self.cfg.estimation_size
        )

    def _converged(self, estimate: YieldEstimate) -> bool:
        return self._failure_seen and estimate.pf_mean > 0.0 and estimate.rho < self.cfg.rho0

    def _propose(self, iteration: int) -> np.ndarray:
        thresholds = self.bench.thresholds.for_model(self.model)
        batch_cfg = self.cfg.batch
        seed = self.cfg.seeds.batch + 1_000_003 * iteration
        if self.cfg.acquisition is AcquisitionKind.ENTROPY_REDUCTION:
            proposal = propose_batch(
                self.model,
                thresholds,
                batch_cfg,
                self._acquisition_ref(iteration),
                rng_seed=seed,
                opt_cfg=self.cfg.optimizer,
                threads=self.threads,
                optimizer_seed=self.cfg.seeds.fantasy + 1_000_003 * iteration,
            )
            self.trace.batches.extend(
                BatchRow(iteration=iteration, seed_index=r.seed_index, seed_score=r.seed_score,
                         final_score=r.final_score, steps=r.steps)
                for r in proposal.records()
            )
            return proposal.points
        presamples = presample_points(batch_cfg.t, self.dimension, seed)
        return comparator_batch(self.model, thresholds, self.cfg.acquisition, batch_cfg.q, presamples, self.cfg.ucb_kappa)

    def run(self) -> RunTrace:
        cfg = self.cfg
        started = time.perf_counter()
        logger.info(
            f"Starting '{self.bench.name}' (D={self.dimension}, n_initial={cfg.n_initial}, "
            f"q={cfg.batch.q}, budget={cfg.max_simulations}, acquisition={cfg.acquisition.value})"
        )
        self._observe(initial_design(cfg.n_initial, self.dimension, cfg.seeds.design, cfg.shell_fraction, cfg.shell_radii))
        self._select(0)
        self._fit(warm=False)
        estimate = self._record(0, started)

        used = 0
        iteration = 0
        while not self._converged(estimate) and used + cfg.batch.q <= cfg.max_simulations:
            iteration += 1
            started = time.perf_counter()
            X_new = self._propose(iteration)
            self._observe(X_new)
            used += X_new.shape[0]
            if iteration % cfg.reselect_every == 0:
                previous = self.feature_map
                self._select(iteration)
                self._fit(warm=self.feature_map.same_as(previous))
            else:
                self._fit(warm=True)
            estimate = self._record(iteration, started)

        self.trace.converged = self._converged(estimate)
        if not self.trace.converged:
            logger.warning(
                f"Budget of {cfg.max_simulations} simulations exhausted before rho < {cfg.rho0} "
                f"(rho={estimate.rho:.4f})"
            )
        return self.trace


def run_yield_estimation(
    cfg: RunConfig,
    bench: Testbench,
    threads: int = 1,
    on_estimate: Optional[Callable[[YieldEstimate], None]] = None,
) -> RunTrace:
    """Run the estimator to convergence or budget exhaustion and return its trace."""
    return YieldEstimator(cfg, bench, threads, on_estimate).run()


# ----------------------------------------------------------------------------
# Monte Carlo baseline
# ----------------------------------------------------------------------------


def mc_baseline_run(bench: Testbench, rho0: float, batch: int, max_n: int, seed: int) -> RunTrace:
    """
    Plain Monte Carlo in batches until the binomial FOM drops below ``rho0``.

    The stopping check waits for the first observed failure.
    """
    if batch < 1 or max_n < 1:
        raise ValueError(f"mc_baseline_run needs batch >= 1 and max_n >= 1, got {batch}, {max_n}")
    rng = np.random.default_rng(seed)
    trace = RunTrace(method="mc")
    n = failures = 0
    iteration = 0
    while n < max_n:
        started = time.perf_counter()
        size = min(batch, max_n - n)
        for offset in range(0, size, MC_CHUNK):
            chunk = min(MC_CHUNK, size - offset)
            failures += int(np.count_nonzero(bench.failed(rng.standard_normal((chunk, bench.dimension)))))
        n += size
        pf = failures / n
        variance = pf * (1.0 - pf) / n
        rho = figure_of_merit(pf, variance)
        trace.append(YieldEstimate(
            iteration=iteration, n_simulations=n, pf_mean=pf, pf_variance=variance, pf_plugin=pf,
            rho=rho, wall_ms=(time.perf_counter() - started) * 1000.0,
        ))
        iteration += 1
        if failures > 0 and rho < rho0:
            trace.converged = True
            break
    logger.info(f"Monte Carlo: {failures} failures in {n} samples, converged={trace.converged}")
    return trace


# ----------------------------------------------------------------------------
# Feature-selection ablation
# ----------------------------------------------------------------------------


def feature_ablation(
    bench: Testbench,
    selectors: Iterable[SelectorKind],
    n_samples: int,
    m: int,
    seeds: Iterable[int],
    train_cfg: Optional[TrainConfig] = None,
    n_test: int = 2000,
    threads: int = 1,
) -> pd.DataFrame:
    """
    Test RMSE of a GP trained on each selector's ``m`` features.

    Training inputs are LHS mapped to the standard normal; test inputs are
    plain normal draws. ``recall`` is the share of the bench's active
    dimensions among the ``m`` largest weights (NaN for projections).
    """
    train_cfg = train_cfg or TrainConfig()
    selectors = [SelectorKind(s) for s in selectors]
    active = set(bench.active_dims)
    rows: List[dict] = []
    for seed in seeds:
        X = to_standard_normal(lhs_points(n_samples, bench.dimension, seed)).points
        Y = bench.eval(X)
        X_test = np.random.default_rng(seed + 10_000).standard_normal((n_test, bench.dimension))
        Y_test = bench.eval(X_test)[:, 0]
        data = Dataset.from_arrays(X, Y)
        for kind in selectors:
            fmap, alpha = select_features(kind, X, Y, m, seed=seed, threads=threads)
            model = gp_fit(data.mapped(fmap), train_cfg, fmap, seed=seed)
            mean, _ = predict_batch(model, model.project(X_test))
            predicted = mean[:, 0] * model.y_std[0] + model.y_mean[0]
            rmse = float(np.sqrt(np.mean((predicted - Y_test) ** 2)))
            recall = math.nan
            if fmap.columns is not None and kind is not SelectorKind.NONE:
                recall = len(active & set(fmap.columns)) / len(active)
            rows.append({"selector": kind.value, "seed": seed, "rmse": rmse, "recall": recall})
            logger.debug(f"ablation seed={seed} {kind.value}: rmse={rmse:.4e} recall={recall:.2f}")
    return pd.DataFrame(rows, columns=["selector", "seed", "rmse", "recall"])
