"""Streaming nonparametric regression with weighted rolling-validation
model selection.

The package provides online SGD estimator families (parametric, kernel,
sieve), a batch orthogonal-series estimator, rolling-validation trackers and
a lockstep selection harness, synthetic experiment generators with a
replicated-run driver, and a perturb-one stability harness.
"""
from .core import (
    ConfigError,
    DataError,
    DivergenceError,
    LabeledStream,
    LossKind,
    NoiseModel,
    RollvalError,
    SQUARED,
    Sample,
    SequencingError,
    pinball,
    pinball_loss,
    pinball_subgradient_sign,
    squared_loss,
    stream_from_arrays,
)
from .basis import BasisCatalog, basis_vector, cosine_eval, multi_index_sequence, tensor_basis_eval
from .estimators import (
    BatchSieveEstimate,
    GaussianKernel,
    KernelSgd,
    ParametricSgd,
    ScheduleSieve,
    SieveSgd,
    SupportStore,
    ZeroEstimator,
    batch_sieve_fit,
    estimator_from_snapshot,
    shared_kernel_row,
)
from .selection import (
    RvTracker,
    SelectionHarness,
    SelectionTrace,
    competition_ranks,
    geometric_checkpoints,
    harness_step,
    record_checkpoint,
    rv_update,
)
from .experiments import (
    BatchSieveFamily,
    CustomLinearGenerator,
    Example1Generator,
    Example2Generator,
    ExperimentConfig,
    KernelCandidate,
    ParametricCandidate,
    SieveCandidate,
    ZeroCandidate,
    build_estimators,
    candidate_from_dict,
    example1_candidates,
    example2_candidates,
    fit_loglog_slope,
    gen_example1,
    gen_example2,
    make_generator,
    oracle_mse,
    quantile_band,
    run_replicates,
    stability_curve,
)

__version__ = "0.1.0"
