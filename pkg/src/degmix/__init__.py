"""Nonparametric degradation modeling and residual-life prediction under
discrete operating environments.

The pipeline: represent degradation signals in a cubic B-spline basis,
model the coefficients as a K-component Gaussian mixture (one component per
environment), fit by EM with optional covariance shrinkage, and predict the
residual-life distribution of a fielded unit by a parametric bootstrap over
its coefficient posterior.
"""

from . import errors
from .basis import BasisSpec, design_matrix, eval_basis, make_basis
from .estimation import (
    FitReport,
    GammaMoments,
    ModelParams,
    ShrinkageParams,
    e_step,
    fit,
    load_params,
    m_step,
    marginal_loglik,
    params_from_dict,
    params_to_dict,
    rand_index,
    save_params,
    shrink_covariance,
)
from .metrics import (
    PercentileErrorTable,
    evaluate_cohort,
    prediction_error,
    write_error_long_csv,
    write_error_summary_csv,
)
from .prediction import (
    GammaPosterior,
    RldSamples,
    cluster_posterior,
    gamma_posterior,
    prior_posterior,
    rld_point_prediction,
    rld_quantiles,
    sample_rld,
)
from .signals import (
    DegradationSignal,
    SimConfig,
    mark_truncation,
    read_lifetimes_csv,
    read_signals_csv,
    simulate_cohort,
    truncate_at,
    write_lifetimes_csv,
    write_signals_csv,
)
from .tuning import CvCell, CvResult, TuningGrid, cross_validate, write_cv_table_csv

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "make_basis", "eval_basis", "design_matrix",
    "DegradationSignal", "SimConfig", "simulate_cohort", "truncate_at",
    "mark_truncation", "read_signals_csv", "write_signals_csv",
    "read_lifetimes_csv", "write_lifetimes_csv",
    "ModelParams", "FitReport", "ShrinkageParams", "GammaMoments",
    "fit", "e_step", "m_step", "marginal_loglik", "shrink_covariance",
    "rand_index", "params_to_dict", "params_from_dict", "save_params",
    "load_params",
    "GammaPosterior", "RldSamples", "cluster_posterior", "gamma_posterior",
    "prior_posterior", "sample_rld", "rld_point_prediction", "rld_quantiles",
    "PercentileErrorTable", "prediction_error", "evaluate_cohort",
    "write_error_summary_csv", "write_error_long_csv",
    "TuningGrid", "CvCell", "CvResult", "cross_validate", "write_cv_table_csv",
    "errors",
]
