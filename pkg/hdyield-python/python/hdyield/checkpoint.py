"""
Serialized forms: model checkpoints (JSON), bench specs (YAML) and run manifests (JSON).

A checkpoint stores every hyperparameter, the MLP weights, the feature map
and the training data each GP was conditioned on; loading refactors the
covariance so the restored model predicts identically.
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError

from .config import BenchSpec
from .exceptions import CheckpointError
from .kernels import BaseKernel, KernelParams, KernelSpec
from .nnet import Activation, MlpSpec, MlpWeights
from .shrinkage import FeatureMap
from .surrogate import GpModel, build_component

CHECKPOINT_FORMAT = 1


class KernelRecord(BaseModel):
    base: str
    log_signal: float
    log_inv_lengthscales: List[float]
    log_linear: float
    layer_sizes: Optional[List[int]] = None
    activation: Optional[str] = None
    weights: Optional[List[List[List[float]]]] = None
    biases: Optional[List[List[float]]] = None

    model_config = {"extra": "forbid"}


class ComponentRecord(BaseModel):
    kernel: KernelRecord
    noise: float = Field(..., ge=0)
    targets: List[float] = Field(..., description="Standardized training targets of this metric")

    model_config = {"extra": "forbid"}


class FeatureMapRecord(BaseModel):
    dimension: int
    kind: str
    columns: Optional[List[int]] = None
    matrix: Optional[List[List[float]]] = None
    offset: Optional[List[float]] = None

    model_config = {"extra": "forbid"}


class ModelCheckpoint(BaseModel):
    format: int = CHECKPOINT_FORMAT
    inputs: List[List[float]] = Field(..., description="Training inputs in the model's (mapped) space")
    y_mean: List[float]
    y_std: List[float]
    components: List[ComponentRecord]
    feature_map: Optional[FeatureMapRecord] = None

    model_config = {"extra": "forbid"}


class RunManifest(BaseModel):
    """Everything needed to reproduce a run directory."""

    version: str
    command: str
    seeds: Dict[str, int]
    config_sha256: str
    bench_sha256: str
    bench_cache_key: str
    threads: int
    converged: Optional[bool] = None
    n_simulations: Optional[int] = None
    files: List[str] = Field(default_factory=list)

    model_config = {"extra": "forbid"}


def _kernel_record(spec: KernelSpec) -> KernelRecord:
    record = KernelRecord(
        base=spec.base.value,
        log_signal=float(spec.params.log_signal),
        log_inv_lengthscales=[float(v) for v in np.atleast_1d(spec.params.log_inv_lengthscales)],
        log_linear=float(spec.params.log_linear),
    )
    if spec.mlp is not None:
        record.layer_sizes = list(spec.mlp.layer_sizes)
        record.activation = spec.mlp.activation.value
        record.weights = [w.tolist() for w in spec.mlp_weights.weights]
        record.biases = [b.tolist() for b in spec.mlp_weights.biases]
    return record


def _kernel_spec(record: KernelRecord) -> KernelSpec:
    params = KernelParams(record.log_signal, np.array(record.log_inv_lengthscales), record.log_linear)
    mlp = weights = None
    if record.layer_sizes is not None:
        if record.weights is None or record.biases is None:
            raise CheckpointError("deep kernel record is missing its MLP weights")
        mlp = MlpSpec(tuple(record.layer_sizes), Activation(record.activation or "relu"))
        weights = MlpWeights([np.array(w) for w in record.weights], [np.array(b) for b in record.biases])
    return KernelSpec(BaseKernel(record.base), params, mlp, weights)


def model_to_checkpoint(model: GpModel) -> ModelCheckpoint:
    fmap = model.feature_map
    fmap_record = None
    if fmap is not None:
        fmap_record = FeatureMapRecord(
            dimension=fmap.dimension,
            kind=fmap.kind,
            columns=list(fmap.columns) if fmap.columns is not None else None,
            matrix=fmap.matrix.tolist() if fmap.matrix is not None else None,
            offset=fmap.offset.tolist() if fmap.offset is not None else None,
        )
    return ModelCheckpoint(
        inputs=model.components[0].X.tolist(),
        y_mean=[float(v) for v in model.y_mean],
        y_std=[float(v) for v in model.y_std],
        components=[
            ComponentRecord(kernel=_kernel_record(c.kernel), noise=c.noise, targets=c.y.tolist())
            for c in model.components
        ],
        feature_map=fmap_record,
    )


def model_from_checkpoint(record: ModelCheckpoint) -> GpModel:
    if record.format != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {record.format}")
    X = np.array(record.inputs, dtype=float)
    components = tuple(
        build_component(_kernel_spec(c.kernel), c.noise, X, np.array(c.targets)) for c in record.components
    )
    fmap = None
    if record.feature_map is not None:
        r = record.feature_map
        fmap = FeatureMap(
            r.dimension,
            columns=tuple(r.columns) if r.columns is not None else None,
            matrix=np.array(r.matrix) if r.matrix is not None else None,
            offset=np.array(r.offset) if r.offset is not None else None,
            kind=r.kind,
        )
    return GpModel(components, np.array(record.y_mean), np.array(record.y_std), fmap)


def save_model(model: GpModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model_to_checkpoint(model).model_dump_json())
    return path


def load_model(path: Union[str, Path]) -> GpModel:
    try:
        record = ModelCheckpoint.model_validate_json(Path(path).read_text())
    except (OSError, ValidationError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return model_from_checkpoint(record)


def save_bench_spec(spec: BenchSpec, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(spec.model_dump(mode="json"), sort_keys=True))
    return path


def load_bench_spec(path: Union[str, Path]) -> BenchSpec:
    try:
        data = yaml.safe_load(Path(path).read_text())
        return BenchSpec.model_validate(data)
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise CheckpointError(f"cannot read bench spec {path}: {e}") from e


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def save_manifest(manifest: RunManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest.model_dump(), indent=2, sort_keys=True))
    return path


def load_manifest(path: Union[str, Path]) -> RunManifest:
    try:
        return RunManifest.model_validate_json(Path(path).read_text())
    except (OSError, ValidationError) as e:
        raise CheckpointError(f"cannot read manifest {path}: {e}") from e
