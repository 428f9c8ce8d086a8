"""
Parallel batch query.

A batch of Q simulation points is assembled without intra-batch model
updates: T pre-samples from the variation density are scored, the pool is
filtered to the high-scoring fraction (relaxing the cut until at least O
remain), Q diverse seeds are drawn with probability growing in their score,
and each seed is optimized independently against the frozen model.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed

from .acquisition import (
    Candidate,
    ReferenceSet,
    ScoringContext,
    Thresholds,
    candidate_scores,
    expected_entropy_reduction,
    optimize_candidate,
    pointwise_entropy,
    scoring_context,
)
from .config import BatchConfig, OptimizerConfig, Stage1Score
from .exceptions import BatchError
from .sampling import presample_points
from .surrogate import GpModel

logger = logging.getLogger(__name__)

DUPLICATE_DISTANCE = 1e-6


@dataclass(frozen=True)
class BatchRecord:
    """Trace row for one optimized seed."""

    seed_index: int
    seed_score: float
    final_score: float
    steps: int


@dataclass
class BatchProposal:
    """The Q optimized points of one acquisition round."""

    candidates: List[Candidate] = field(default_factory=list)

    @property
    def points(self) -> np.ndarray:
        return np.vstack([c.point for c in self.candidates])

    @property
    def scores(self) -> np.ndarray:
        return np.array([c.score for c in self.candidates])

    def records(self) -> List[BatchRecord]:
        return [BatchRecord(c.seed_index, c.seed_score, c.score, c.steps) for c in self.candidates]


def score_presamples(
    model: GpModel,
    thresholds: Thresholds,
    points: np.ndarray,
    cfg: BatchConfig,
    ref: Optional[ReferenceSet] = None,
    n_fantasy: int = 8,
    context: Optional[ScoringContext] = None,
) -> np.ndarray:
    """Stage-one scores: pointwise entropy (default) or exact entropy reduction."""
    if cfg.stage1_score is Stage1Score.POINTWISE_ENTROPY:
        return pointwise_entropy(model, thresholds, points)
    if context is None:
        context = scoring_context(model, thresholds, ref)
    return candidate_scores(model, thresholds, points, n_fantasy, context)


def filter_candidates(scores: np.ndarray, cfg: BatchConfig) -> List[int]:
    """
    Indices with ``s_i >= gamma * s_max``, relaxing ``gamma <- (1 - beta) gamma``
    until at least ``min(O, T)`` survive.
    """
    scores = np.asarray(scores, dtype=float)
    needed = min(cfg.o, scores.size)
    s_max = float(np.max(scores)) if scores.size else 0.0
    if s_max <= 0.0:
        logger.warning("No positive acquisition score in the pre-sample pool; keeping the top entries")
        return sorted(int(i) for i in np.argsort(-scores, kind="stable")[:needed])

    gamma = cfg.gamma
    floor = float(np.min(scores))
    while True:
        kept = np.flatnonzero(scores >= gamma * s_max)
        if kept.size >= needed:
            return [int(i) for i in kept]
        if gamma * s_max <= floor:
            return list(range(scores.size))
        gamma *= 1.0 - cfg.beta
        logger.debug(f"relaxing filter fraction to {gamma:.3g} ({kept.size} < {needed} kept)")


def seed_weights(scores: np.ndarray, eta1: float) -> np.ndarray:
    """omega_i = exp(eta1 * s_i / s_max); uniform when no score is positive."""
    scores = np.asarray(scores, dtype=float)
    s_max = float(np.max(scores)) if scores.size else 0.0
    if s_max <= 0.0:
        return np.ones_like(scores)
    return np.exp(eta1 * scores / s_max)


def weighted_order(
    filtered: List[int], scores: np.ndarray, cfg: BatchConfig, rng_seed: int, count: Optional[int] = None
) -> List[int]:
    """Sequential draws without replacement with probability proportional to the weights."""
    pool = np.asarray(filtered, dtype=int)
    weights = seed_weights(np.asarray(scores, dtype=float), cfg.eta1)[pool]
    rng = np.random.default_rng(rng_seed)
    count = pool.size if count is None else count
    order: List[int] = []
    remaining = np.ones(pool.size, dtype=bool)
    for _ in range(count):
        w = np.where(remaining, weights, 0.0)
        cumulative = np.cumsum(w)
        pick = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
        pick = min(pick, pool.size - 1)
        while not remaining[pick]:
            pick -= 1
        remaining[pick] = False
        order.append(int(pool[pick]))
    return order


def sample_seeds(filtered: List[int], scores: np.ndarray, cfg: BatchConfig, rng_seed: int) -> List[int]:
    """Q pre-sample indices drawn from the filtered pool."""
    if len(filtered) < cfg.q:
        raise BatchError(f"filtered pool has {len(filtered)} candidates, fewer than q={cfg.q}")
    return weighted_order(filtered, scores, cfg, rng_seed, count=cfg.q)


def propose_batch(
    model: GpModel,
    thresholds: Thresholds,
    cfg: BatchConfig,
    ref: ReferenceSet,
    rng_seed: int,
    opt_cfg: Optional[OptimizerConfig] = None,
    presamples: Optional[np.ndarray] = None,
    threads: int = 1,
    optimizer_seed: Optional[int] = None,
) -> BatchProposal:
    """
    Score, filter, sample and optimize Q seeds concurrently.

    Without explicit ``presamples`` the pool is T consecutive normal-mapped Sobol
    points starting at a window chosen by ``rng_seed``. Outputs closer than
    ``DUPLICATE_DISTANCE`` (in the model's input space) to an accepted point are
    replaced by optimizing the next seed in weighted order. When the seeds run out
    the batch is topped up with distinct raw pre-samples by stage-one score, and
    :class:`BatchError` is raised if fewer than Q distinct points exist.
    ``optimizer_seed`` (default ``rng_seed``) drives the per-seed perturbation fallback.
    """
    opt_cfg = opt_cfg or OptimizerConfig()
    if presamples is None:
        presamples = presample_points(cfg.t, ref.d, rng_seed)
    context = scoring_context(model, thresholds, ref)
    scores = score_presamples(model, thresholds, presamples, cfg, n_fantasy=opt_cfg.n_fantasy, context=context)
    filtered = filter_candidates(scores, cfg)
    if len(filtered) < cfg.q:
        raise BatchError(f"filtered pool has {len(filtered)} candidates, fewer than q={cfg.q}")
    order = weighted_order(filtered, scores, cfg, rng_seed)
    base_seed = rng_seed if optimizer_seed is None else optimizer_seed

    def run(index: int) -> Candidate:
        found = optimize_candidate(
            model, thresholds, presamples[index], None, opt_cfg, context=context,
            rng_seed=base_seed + 7919 * (index + 1),
        )
        return Candidate(found.point, found.score, found.seed_score, found.steps, index)

    accepted: List[Candidate] = []
    accepted_inputs: List[np.ndarray] = []

    def distinct(z: np.ndarray) -> bool:
        return all(np.linalg.norm(z - other) >= DUPLICATE_DISTANCE for other in accepted_inputs)

    cursor = 0
    while len(accepted) < cfg.q and cursor < len(order):
        wave = order[cursor:cursor + cfg.q - len(accepted)]
        cursor += len(wave)
        results = Parallel(n_jobs=threads, prefer="threads")(delayed(run)(i) for i in wave)
        for cand in results:
            z = model.project(cand.point)[0]
            if not distinct(z):
                logger.debug(f"dropping duplicate optimum from seed {cand.seed_index}")
                continue
            if len(accepted) < cfg.q:
                accepted.append(cand)
                accepted_inputs.append(z)
    if len(accepted) < cfg.q:
        logger.warning(f"Only {len(accepted)} distinct optima for q={cfg.q}; filling with raw pre-samples")
        for index in np.argsort(-scores, kind="stable"):
            if len(accepted) == cfg.q:
                break
            z = model.project(presamples[index])[0]
            if distinct(z):
                point = np.asarray(presamples[index], dtype=float)
                score = expected_entropy_reduction(model, thresholds, point, n_fantasy=opt_cfg.n_fantasy, context=context)
                accepted.append(Candidate(point, score, score, 0, int(index)))
                accepted_inputs.append(z)
    if len(accepted) < cfg.q:
        raise BatchError(f"only {len(accepted)} distinct points among {len(presamples)} pre-samples, fewer than q={cfg.q}")
    logger.debug(f"batch of {len(accepted)}: mean score {np.mean([c.score for c in accepted]):.3e}")
    return BatchProposal(accepted)
