"""
Run traces: per-iteration yield estimates and their CSV form.
"""

import math
from pathlib import Path
from typing import List, Optional, Union

import pandas as pd
from pydantic import BaseModel, Field, model_validator

from .exceptions import TraceExistsError

TRACE_COLUMNS = ["iteration", "n_simulations", "pf_mean", "pf_variance", "pf_plugin", "rho", "ih", "wall_ms"]
BATCH_COLUMNS = ["iteration", "seed_index", "seed_score", "final_score", "steps"]
SELECTION_COLUMNS = ["dim_index", "alpha", "selected_flag"]
FLOAT_FORMAT = "%.6e"


class YieldEstimate(BaseModel):
    """One snapshot of the estimator."""

    iteration: int = Field(..., ge=0)
    n_simulations: int = Field(..., ge=0)
    pf_mean: float = Field(..., ge=0.0, le=1.0)
    pf_variance: float = Field(..., ge=0.0)
    pf_plugin: float = Field(..., ge=0.0, le=1.0)
    rho: float = Field(..., ge=0.0, description="Figure of merit; +inf while pf_mean is 0")
    ih: float = Field(default=math.nan, description="Integral entropy (NaN for plain Monte Carlo)")
    wall_ms: float = Field(default=0.0, ge=0.0)


class BatchRow(BaseModel):
    iteration: int
    seed_index: int
    seed_score: float
    final_score: float
    steps: int


class RunTrace(BaseModel):
    """Ordered estimates of a run plus its convergence flag."""

    method: str = Field(default="surrogate", description="surrogate | mc")
    estimates: List[YieldEstimate] = Field(default_factory=list)
    batches: List[BatchRow] = Field(default_factory=list)
    converged: bool = False

    @model_validator(mode="after")
    def _increasing(self) -> "RunTrace":
        counts = [e.n_simulations for e in self.estimates]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError("n_simulations must be strictly increasing along a trace")
        return self

    def append(self, estimate: YieldEstimate) -> None:
        if self.estimates and estimate.n_simulations <= self.estimates[-1].n_simulations:
            raise ValueError(
                f"n_simulations {estimate.n_simulations} does not exceed {self.estimates[-1].n_simulations}"
            )
        self.estimates.append(estimate)

    @property
    def final(self) -> Optional[YieldEstimate]:
        return self.estimates[-1] if self.estimates else None

    @property
    def n_simulations(self) -> int:
        return self.estimates[-1].n_simulations if self.estimates else 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([e.model_dump() for e in self.estimates], columns=TRACE_COLUMNS)

    def batches_frame(self) -> pd.DataFrame:
        return pd.DataFrame([b.model_dump() for b in self.batches], columns=BATCH_COLUMNS)


def _guard(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise TraceExistsError(str(path))
    path.parent.mkdir(parents=True, exist_ok=True)


def write_frame(frame: pd.DataFrame, path: Union[str, Path], force: bool = False) -> Path:
    """CSV with a header row, '.' decimals and scientific floats."""
    path = Path(path)
    _guard(path, force)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_trace(trace: RunTrace, path: Union[str, Path], force: bool = False) -> Path:
    return write_frame(trace.to_frame(), path, force)


def read_trace(path: Union[str, Path], method: str = "surrogate", converged: Optional[bool] = None) -> RunTrace:
    """Load a trace CSV. The CSV does not carry the convergence flag; the run manifest does."""
    frame = pd.read_csv(path)
    missing = set(TRACE_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"{path} is missing trace columns {sorted(missing)}")
    estimates = [YieldEstimate(**row) for row in frame[TRACE_COLUMNS].to_dict(orient="records")]
    trace = RunTrace(method=method, estimates=estimates)
    if converged is not None:
        trace.converged = converged
    return trace


def selection_frame(alpha, selected) -> pd.DataFrame:
    selected = set(int(i) for i in selected)
    return pd.DataFrame({
        "dim_index": range(len(alpha)),
        "alpha": [float(a) for a in alpha],
        "selected_flag": [int(i in selected) for i in range(len(alpha))],
    }, columns=SELECTION_COLUMNS)
