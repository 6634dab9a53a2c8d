"""agemix: distributional regression for partner age distributions."""

from .data_io import GeneratorConfig, PartnershipRecord, SubsetKey, load_csv, save_csv, simulate, stratify
from .deheap import HeapReport, deheap, heaping_index, nw_expected
from .design import DesignRow, ModelSpec, ModelTag, build_design, spline_basis
from .distributions import Family, Moments, ParamVector, cdf, empirical_moments, log_pdf, quantile, sample
from .evaluation import (
    ComparisonReport,
    ElpdResult,
    LogLikMatrix,
    elpd_diff,
    elpd_loo,
    pointwise_loglik,
    qq_rmse,
)
from .inference import (
    FitProblem,
    FitResult,
    PosteriorDraws,
    fit_map,
    laplace_draws,
    linpred_to_params,
    neg_log_posterior,
    neg_log_posterior_and_grad,
    posterior_predictive,
    predictive_for_records,
)
from .transforms import Transform, TransformKind, forward, inverse, log_jacobian

__version__ = "0.1.0"
