"""Two-component Gamma-Poisson mixture modeling of longitudinal clone counts.

Partitions T-cell receptor clonotype trajectories into dynamic clones,
whose per-read proportion is redrawn at every follow-up, and static
clones, whose proportion is shared across follow-ups.  Hyperparameters
are estimated by empirical Bayes with an EM algorithm; thresholded
responsibilities yield per-clone calls and cohort-level association
statistics.
"""

from .classify import (
    AssociationResult,
    Call,
    ChiSquareResult,
    CloneCall,
    Direction,
    LogLinearResult,
    OperatingCharacteristics,
    PersonCounts,
    associate,
    chi_square_dichotomized,
    classify,
    dynamic_counts_per_person,
    loglinear_rate_ratio,
    operating_characteristics,
)
from .cohort import CohortTable, filter_clones, ingest
from .em import (
    FitConfig,
    FitResult,
    convergence_stat,
    e_step,
    fit_em,
    m_step,
    observed_loglik,
)
from .errors import (
    CloneDynError,
    IdentifiabilityError,
    OptimizerError,
    ParseError,
    ValidationError,
)
from .model import (
    CloneSeries,
    Hyperparams,
    PosteriorGamma,
    SeriesBatch,
    dynamic_log_pmf,
    log_component_quotient,
    posterior_gamma_params,
    responsibility,
    static_log_pmf,
)
from .simulate import SimConfig, SimTruth, simulate

__all__ = [
    "AssociationResult",
    "Call",
    "ChiSquareResult",
    "CloneCall",
    "CloneDynError",
    "CloneSeries",
    "CohortTable",
    "Direction",
    "FitConfig",
    "FitResult",
    "Hyperparams",
    "IdentifiabilityError",
    "LogLinearResult",
    "OperatingCharacteristics",
    "OptimizerError",
    "ParseError",
    "PersonCounts",
    "PosteriorGamma",
    "SeriesBatch",
    "SimConfig",
    "SimTruth",
    "ValidationError",
    "associate",
    "chi_square_dichotomized",
    "classify",
    "convergence_stat",
    "dynamic_counts_per_person",
    "dynamic_log_pmf",
    "e_step",
    "filter_clones",
    "fit_em",
    "ingest",
    "log_component_quotient",
    "loglinear_rate_ratio",
    "m_step",
    "observed_loglik",
    "operating_characteristics",
    "posterior_gamma_params",
    "responsibility",
    "simulate",
    "static_log_pmf",
]
