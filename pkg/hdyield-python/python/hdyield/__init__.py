"""
hdyield - rare-event yield estimation in high-dimensional process-variation spaces.

A shrinkage deep-kernel Gaussian-process surrogate is trained on simulated
process-variation samples, HSIC-Lasso picks the dimensions that matter, and an
entropy-reduction acquisition chooses parallel batches of new simulations
until the failure-probability estimate reaches the requested figure of merit.
"""

__version__ = "0.1.0"

from .acquisition import (
    ReferenceSet,
    Thresholds,
    YieldPosterior,
    bernoulli_entropy,
    expected_entropy_reduction,
    integral_entropy,
    optimize_candidate,
    pass_likelihood,
    yield_posterior,
)
from .batch import BatchProposal, filter_candidates, propose_batch, sample_seeds
from .checkpoint import load_model, save_model
from .config import (
    AcquisitionKind,
    BatchConfig,
    BenchSpec,
    Direction,
    ExperimentConfig,
    OptimizerConfig,
    RunConfig,
    SeedConfig,
    SelectorKind,
    TrainConfig,
    dump_config,
    parse_config,
)
from .estimator import (
    YieldEstimator,
    comparator_acquisition,
    feature_ablation,
    figure_of_merit,
    mc_baseline_run,
    plugin_yield,
    run_yield_estimation,
)
from .exceptions import (
    BatchError,
    CalibrationError,
    CheckpointError,
    ConfigurationError,
    FactorizationError,
    HdyieldError,
    NonFiniteGradientError,
    SelectionError,
    ShapeMismatchError,
    TraceExistsError,
    UnsupportedDimensionError,
)
from .nnet import MlpSpec, MlpWeights, mlp_forward, mlp_input_jacobian, mlp_weight_gradients
from .sampling import PointSet, Space, lhs_points, log_density_standard_normal, sobol_points, to_standard_normal
from .shrinkage import FeatureMap, FeatureWeights, hsic_lasso, lasso_baseline, select_features, select_top
from .surrogate import Dataset, GpModel, fantasy_update, gp_fit, gp_predict, log_marginal_likelihood, posterior_gradient
from .testbench import Testbench, build_bench, make_linear_tail, make_quadratic, make_sram_like, mc_oracle
from .trace import RunTrace, YieldEstimate, read_trace, write_trace

__all__ = [
    "__version__",
    # Sampling
    "PointSet",
    "Space",
    "sobol_points",
    "lhs_points",
    "to_standard_normal",
    "log_density_standard_normal",
    # Feature extractor
    "MlpSpec",
    "MlpWeights",
    "mlp_forward",
    "mlp_input_jacobian",
    "mlp_weight_gradients",
    # Surrogate
    "Dataset",
    "GpModel",
    "gp_fit",
    "gp_predict",
    "log_marginal_likelihood",
    "fantasy_update",
    "posterior_gradient",
    # Feature selection
    "FeatureMap",
    "FeatureWeights",
    "hsic_lasso",
    "lasso_baseline",
    "select_top",
    "select_features",
    # Acquisition
    "Thresholds",
    "ReferenceSet",
    "YieldPosterior",
    "pass_likelihood",
    "yield_posterior",
    "bernoulli_entropy",
    "integral_entropy",
    "expected_entropy_reduction",
    "optimize_candidate",
    # Batch
    "BatchProposal",
    "filter_candidates",
    "sample_seeds",
    "propose_batch",
    # Estimator
    "YieldEstimator",
    "figure_of_merit",
    "plugin_yield",
    "run_yield_estimation",
    "comparator_acquisition",
    "mc_baseline_run",
    "feature_ablation",
    # Testbenches
    "Testbench",
    "make_sram_like",
    "make_quadratic",
    "make_linear_tail",
    "build_bench",
    "mc_oracle",
    # Config and persistence
    "AcquisitionKind",
    "SelectorKind",
    "Direction",
    "BatchConfig",
    "TrainConfig",
    "OptimizerConfig",
    "SeedConfig",
    "RunConfig",
    "BenchSpec",
    "ExperimentConfig",
    "parse_config",
    "dump_config",
    "RunTrace",
    "YieldEstimate",
    "read_trace",
    "write_trace",
    "save_model",
    "load_model",
    # Exceptions
    "HdyieldError",
    "ConfigurationError",
    "ShapeMismatchError",
    "UnsupportedDimensionError",
    "FactorizationError",
    "NonFiniteGradientError",
    "CalibrationError",
    "SelectionError",
    "BatchError",
    "TraceExistsError",
    "CheckpointError",
]
