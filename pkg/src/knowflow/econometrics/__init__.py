"""Estimators: fixed-effects OLS, logit, Cox, 2SLS, sandwich covariances, tables."""
from .cox import cox_fit, hazard_ratios, partial_loglik
from .design import (DesignMatrix, collinearity_report, fixed_effects_expand,
                     independent_columns, resolve_collinearity, within_transform)
from .iv import two_stage_least_squares
from .linear import ols_fit
from .logistic import average_marginal_effects, logistic_fit
from .results import (EstimationResult, clustered_covariance, clustered_se,
                      robust_covariance, use_clustered)
from .tables import coefficient_frame, fit_frame, layout, regression_table, render_text, stars

__all__ = [
    "DesignMatrix", "EstimationResult", "average_marginal_effects", "clustered_covariance",
    "clustered_se", "coefficient_frame", "collinearity_report", "cox_fit", "fit_frame",
    "fixed_effects_expand", "hazard_ratios", "independent_columns", "layout", "logistic_fit",
    "ols_fit", "partial_loglik", "regression_table", "render_text", "resolve_collinearity",
    "robust_covariance", "stars", "two_stage_least_squares", "use_clustered",
    "within_transform",
]
