"""Batch Bayesian optimization by sampling acquisition functions from the
hyper-parameter data posterior, with the associated baselines and an
experiment harness."""

from .acquisition import (
    AcquisitionSample,
    ei_value,
    lcb_value,
    make_acquisition_sample,
    make_ts_sample,
    marginal_value,
    maximize,
)
from .benchmarks import BenchmarkSpec, evaluate, min_value, register
from .errors import (
    AtsboError,
    ConfigError,
    InitializationError,
    NumericalError,
    StateFileError,
    StateMismatchError,
)
from .gp import (
    Dataset,
    GpFunctionSample,
    HyperParams,
    NormState,
    PosteriorSummary,
    denormalize,
    log_marginal_likelihood,
    matern52,
    normalize,
    posterior,
    sample_gp_function,
)
from .harness import (
    ExperimentConfig,
    ExperimentTrace,
    intra_batch_distance,
    new_state,
    regret,
    run_experiment,
    suggest,
    update,
)
from .hyperposterior import (
    EnsembleResult,
    JitterSpec,
    McmcConfig,
    PriorSpec,
    ensemble_sample,
    log_posterior,
    log_prior,
    sample_hyperparams,
    sample_jitter,
)
from .strategies import (
    BatchConfig,
    BatchProposal,
    HallucinatedDataset,
    PointProvenance,
    ats_batch,
    ats_enhance,
    blcb_batch,
    hats_batch,
    jats_batch,
    propose_batch,
    pts_batch,
    sequential_step,
)

__version__ = "0.1.0"
