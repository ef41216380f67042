"""CMA-ES with Gaussian-process surrogate evolution control."""

from .acquisition import (
    AcquisitionSpec,
    criterion_values,
    ei,
    normal_cdf,
    normal_pdf,
    normal_quantile,
    poi,
    quantile_criterion,
    rank_candidates,
)
from .benchmark import Objective, RunTrace, run_experiment, summarize
from .cma import (
    CmaState,
    EvaluatedPopulation,
    eigendecompose,
    empirical_covariance,
    initial_state,
    mahalanobis_distance,
    sample_population,
    to_eigenbasis,
    update_state,
)
from .config import ExperimentConfig, parse_config
from .control import (
    BasicControl,
    GenerationBased,
    GenerationLedger,
    GpConfig,
    LowDimProjection,
    RestrictedProjection,
    SurrogateArchive,
    TwoStage,
    generations_per_batch,
    hw_batches,
    project_to_principal_subspace,
    ranking_agreement,
    resample_restricted,
    select_by_clustering,
)
from .gp import (
    DotProduct,
    GammaExponential,
    GeneralizedDotProduct,
    GpModel,
    Mahalanobis,
    MeanPrior,
    SquaredExponential,
    bar_f_from_aggregate,
    fit,
    kernel_eval,
    predict,
    predict_batch,
)

__version__ = "0.1.0"
