"""
Configuration models and the YAML config-file layer.

Every setting an experiment needs is a pydantic model with documented
defaults. A config file has the top-level sections ``bench``, ``run``,
``batch``, ``train``, ``optimizer`` and ``seeds``; only ``bench.name`` and
``run.max_simulations`` are required. Unknown keys are rejected.
"""

import hashlib
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import psutil
import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from .exceptions import ConfigurationError

_STRICT = {"extra": "forbid", "validate_assignment": True, "use_enum_values": False}


class AcquisitionKind(str, Enum):
    ENTROPY_REDUCTION = "entropy_reduction"
    EI = "ei"
    PI = "pi"
    UCB = "ucb"


class SelectorKind(str, Enum):
    HSIC_LASSO = "hsic_lasso"
    LASSO = "lasso"
    FA = "fa"
    PCA = "pca"
    MI = "mi"
    RANDOM_EMBEDDING = "random_embedding"
    NONE = "none"


class Stage1Score(str, Enum):
    POINTWISE_ENTROPY = "pointwise_entropy"
    FANTASY_REDUCTION = "fantasy_reduction"


class FomVariance(str, Enum):
    INTEGRATED = "integrated"
    POISSON_BINOMIAL = "poisson_binomial"


class Direction(str, Enum):
    FAIL_IF_GREATER = "fail_if_greater"
    FAIL_IF_LESS = "fail_if_less"

    @property
    def sign(self) -> float:
        return 1.0 if self is Direction.FAIL_IF_GREATER else -1.0


class BenchKind(str, Enum):
    SRAM_LIKE = "sram_like"
    LINEAR_TAIL = "linear_tail"
    QUADRATIC = "quadratic"


class SeedConfig(BaseModel):
    """Named seeds; each randomized component draws only from its own seed."""

    design: int = Field(default=0, description="Initial design (LHS + shell points)")
    selection: int = Field(default=1, description="Gram subsampling and random embeddings")
    training: int = Field(default=2, description="GP restarts and MLP initialization")
    batch: int = Field(default=3, description="Pre-sample offsets and weighted seed sampling")
    fantasy: int = Field(default=4, description="Random perturbation fallback in candidate optimization")
    mc: int = Field(default=5, description="Monte Carlo baseline and oracle")

    model_config = _STRICT

    @classmethod
    def from_base(cls, base: int) -> "SeedConfig":
        """Derive every named seed from a single ``--seed`` override."""
        return cls(
            design=base,
            selection=base + 1,
            training=base + 2,
            batch=base + 3,
            fantasy=base + 4,
            mc=base + 5,
        )


class TrainConfig(BaseModel):
    """Marginal-likelihood training of the surrogate."""

    base_kernel: str = Field(default="matern52+linear", description="rbf | matern52 | linear | matern52+linear")
    deep: bool = Field(default=True, description="Wrap the base kernel around an MLP feature extractor")
    hidden_layers: Optional[List[int]] = Field(
        default=None, description="MLP widths after the input; default 200-100-10 or 1000-500-200-20"
    )
    activation: str = Field(default="relu", description="relu | tanh")
    iterations: int = Field(default=200, ge=0, description="Adam steps per restart")
    refit_iterations: int = Field(default=50, ge=0, description="Warm-started Adam steps when refitting in the loop")
    learning_rate: float = Field(default=0.01, gt=0)
    restarts: int = Field(default=3, ge=1, description="Random restarts; the best likelihood wins")
    noise_init: float = Field(default=1e-2, gt=0)
    noise_min: float = Field(default=1e-6, gt=0)
    noise_max: float = Field(default=1.0, gt=0)

    model_config = _STRICT

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.base_kernel not in ("rbf", "matern52", "linear", "matern52+linear"):
            raise ValueError(f"unknown base_kernel '{self.base_kernel}'")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation '{self.activation}'")
        if self.noise_min >= self.noise_max:
            raise ValueError("noise_min must be below noise_max")
        return self


class OptimizerConfig(BaseModel):
    """Gradient ascent of a single candidate on the acquisition objective."""

    steps: int = Field(default=50, ge=0)
    learning_rate: float = Field(default=0.05, gt=0)
    n_fantasy: int = Field(default=8, ge=1, description="Quantile-stratified fantasy observations per candidate")
    perturbation: float = Field(default=0.1, gt=0, description="Random step used when a gradient is non-finite")

    model_config = _STRICT


class BatchConfig(BaseModel):
    """Parallel batch query: pre-sample, filter, weight, optimize."""

    q: int = Field(default=20, ge=1, description="Batch size Q")
    t: Optional[int] = Field(default=None, description="Pre-sample count T (default 100 * Q, at least 10 * Q)")
    o: Optional[int] = Field(default=None, description="Minimum filtered pool O > Q (default 2 * Q)")
    gamma: float = Field(default=0.3, ge=0, le=1, description="Fraction of the best score kept by the filter")
    beta: float = Field(default=0.9, gt=0, lt=1, description="Relaxation coefficient")
    eta1: float = Field(default=0.5, ge=0, description="Weight scale of exp(eta1 * s / s_max)")
    stage1_score: Stage1Score = Field(default=Stage1Score.POINTWISE_ENTROPY)

    model_config = _STRICT

    @model_validator(mode="after")
    def _resolve(self) -> "BatchConfig":
        if self.t is None:
            object.__setattr__(self, "t", 100 * self.q)
        if self.o is None:
            object.__setattr__(self, "o", 2 * self.q)
        if self.t < 10 * self.q:
            raise ValueError(f"t={self.t} must be at least 10 * q = {10 * self.q}")
        if self.o <= self.q:
            raise ValueError(f"o={self.o} must exceed q={self.q}")
        if self.o > self.t:
            raise ValueError(f"o={self.o} cannot exceed t={self.t}")
        return self


class RunConfig(BaseModel):
    """The estimation loop and its sub-configurations."""

    n_initial: int = Field(default=100, ge=10)
    max_simulations: int = Field(..., ge=0, description="Budget of testbench evaluations after the initial design")
    rho0: float = Field(default=0.1, gt=0, description="FOM threshold")
    m_features: Optional[int] = Field(default=None, ge=1, description="Selected features (default min(D, 20))")
    reselect_every: int = Field(default=5, ge=1)
    acquisition: AcquisitionKind = Field(default=AcquisitionKind.ENTROPY_REDUCTION)
    selector: SelectorKind = Field(default=SelectorKind.HSIC_LASSO)
    shell_fraction: float = Field(default=0.1, ge=0, lt=1)
    shell_radii: List[float] = Field(default_factory=lambda: [3.0, 4.0, 5.0])
    reference_size: int = Field(default=4096, ge=1024, description="Acquisition reference set M")
    estimation_size: int = Field(default=131072, ge=1024, description="Points used to estimate Pf")
    fom_variance: FomVariance = Field(default=FomVariance.INTEGRATED)
    hsic_max_rows: int = Field(default=2000, ge=10)
    ucb_kappa: float = Field(default=2.0, gt=0)
    threads: int = Field(default=1, ge=1)
    batch: BatchConfig = Field(default_factory=BatchConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seeds: SeedConfig = Field(default_factory=SeedConfig)

    model_config = _STRICT


class BenchSpec(BaseModel):
    """Synthetic testbench definition, including its calibrated oracle once known."""

    name: str
    kind: BenchKind = Field(default=BenchKind.SRAM_LIKE)
    dimension: int = Field(default=60, ge=1)
    n_active: int = Field(default=12, ge=1)
    n_failure_regions: int = Field(default=2, ge=0)
    target_pf: float = Field(default=1e-4, gt=0, lt=1, description="Failure rate the threshold is calibrated to; sram_like benches need (1e-6, 1e-2)")
    seed: int = Field(default=1)
    calibration_samples: int = Field(default=10_000_000, ge=1000)
    direction: Direction = Field(default=Direction.FAIL_IF_GREATER)
    threshold: Optional[float] = Field(default=None, description="Calibrated z0 (filled by calibration)")
    oracle_pf: Optional[float] = Field(default=None)
    oracle_se: Optional[float] = Field(default=None)

    model_config = _STRICT

    @model_validator(mode="after")
    def _check(self) -> "BenchSpec":
        if self.n_active > self.dimension:
            raise ValueError(f"n_active={self.n_active} exceeds dimension={self.dimension}")
        if self.kind is BenchKind.SRAM_LIKE and not 1e-6 < self.target_pf < 1e-2:
            raise ValueError(f"target_pf={self.target_pf} must lie in (1e-6, 1e-2) for sram_like benches")
        return self

    def cache_key(self) -> str:
        """Stable hash of the fields that determine the bench function."""
        payload = self.model_dump_json(include={"name", "kind", "dimension", "n_active", "n_failure_regions", "target_pf", "seed", "calibration_samples", "direction"})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class ExperimentConfig(BaseModel):
    """A bench plus the run settings used against it."""

    bench: BenchSpec
    run: RunConfig

    model_config = _STRICT

    @model_validator(mode="after")
    def _resolve(self) -> "ExperimentConfig":
        if self.run.m_features is None:
            self.run.m_features = min(self.bench.dimension, 20)
        if self.run.m_features > self.bench.dimension:
            raise ValueError(f"m_features={self.run.m_features} exceeds bench dimension {self.bench.dimension}")
        return self


_SECTIONS = ("batch", "train", "optimizer", "seeds")


def _to_configuration_error(exc: ValidationError, prefix: str = "") -> ConfigurationError:
    first = exc.errors()[0]
    loc = [str(part) for part in first["loc"]]
    # Nested run sections live at the top level of the file.
    if len(loc) >= 2 and loc[0] == "run" and loc[1] in _SECTIONS:
        loc = loc[1:]
    key_path = ".".join(([prefix] if prefix else []) + loc) or None
    if first["type"] == "extra_forbidden":
        return ConfigurationError("unknown key", key_path=key_path)
    if first["type"] == "missing":
        return ConfigurationError("missing required key", key_path=key_path)
    return ConfigurationError(first["msg"], key_path=key_path, expected=first["type"])


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a config document (already loaded from YAML) into an ExperimentConfig."""
    if not isinstance(data, dict):
        raise ConfigurationError("config document must be a mapping", expected="mapping")
    unknown = set(data) - {"bench", "run", *_SECTIONS}
    if unknown:
        raise ConfigurationError("unknown key", key_path=sorted(unknown)[0])
    run = dict(data.get("run") or {})
    for section in _SECTIONS:
        if section in run:
            raise ConfigurationError("unknown key", key_path=f"run.{section}")
        if section in data:
            run[section] = data[section]
    try:
        return ExperimentConfig(bench=data.get("bench"), run=run)
    except ValidationError as exc:
        raise _to_configuration_error(exc) from exc


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """Load and validate a YAML config file, resolving every default."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"malformed YAML in {path}: {e}") from e
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Resolved config in the file layout (sections lifted to the top level)."""
    run = cfg.run.model_dump(mode="json")
    document: Dict[str, Any] = {"bench": cfg.bench.model_dump(mode="json"), "run": run}
    for section in _SECTIONS:
        document[section] = run.pop(section)
    return document


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def default_threads() -> int:
    """Worker count from HDYIELD_THREADS, else the number of physical cores."""
    env = os.getenv("HDYIELD_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return max(1, psutil.cpu_count(logical=False) or 1)


def default_cache_dir() -> Path:
    return Path(os.getenv("HDYIELD_CACHE_DIR", str(Path.home() / ".hdyield" / "cache")))
