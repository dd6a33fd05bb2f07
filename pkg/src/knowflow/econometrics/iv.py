"""Two-stage least squares with first-stage and reduced-form reports."""
from __future__ import annotations

import logging
from dataclasses import replace

from ..errors import SingularFitError
from .design import DesignMatrix, fixed_effects_expand, independent_columns, resolve_collinearity
from .linear import _qr_solve, apply_covariance, ols_fit
from .results import EstimationResult

log = logging.getLogger(__name__)

WEAK_F = 10.0


def two_stage_least_squares(d: DesignMatrix, endogenous: str, instrument: str,
                            drop_collinear: bool = False, cov: str = "auto") -> EstimationResult:
    """Just-identified 2SLS; ``d`` holds exogenous, endogenous and instrument columns.

    Second-stage residuals use the observed endogenous column, not its
    first-stage prediction. The first-stage F is the squared t statistic of
    the excluded instrument under the same covariance as the second stage.
    """
    if endogenous == instrument:
        raise ValueError("instrument and endogenous regressor must be distinct columns")
    d = fixed_effects_expand(d)
    dx, dropped = resolve_collinearity(d.drop([instrument]), drop_collinear)
    dz = d.drop([endogenous, *dropped])
    if not independent_columns(dz.X).all():
        raise SingularFitError("instrument is collinear with the exogenous regressors",
                               [instrument])
    n, p = dx.X.shape
    if n <= p + 1:
        raise SingularFitError(f"n = {n} observations for p = {p} parameters", dropped)

    first = ols_fit(replace(dz, y=dx.column(endogenous)), cov=cov)
    k_end = dx.names.index(endogenous)
    Xhat = dx.X.copy()
    Xhat[:, k_end] = first.fitted
    beta, bread = _qr_solve(Xhat, dx.y)
    resid = dx.y - dx.X @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (n - p)
    has_const = "const" in dx.names
    tss = float(((dx.y - dx.y.mean()) ** 2).sum()) if has_const else float(dx.y @ dx.y)
    reduced = ols_fit(dz, cov=cov)

    t_inst = first.coef(instrument) / first.se_of(instrument)
    f_first = float(t_inst ** 2)
    weak = f_first < WEAK_F
    if weak:
        log.warning("weak instrument: first-stage F = %.3f < %.0f", f_first, WEAK_F)
    r2 = 1 - rss / tss if tss > 0 else float("nan")
    fit = EstimationResult(
        model="2sls",
        names=dx.names,
        params=beta,
        cov=sigma2 * bread,
        cov_type="model",
        n_obs=n,
        df_inference=n - p,
        cov_model=sigma2 * bread,
        r2=float(r2),
        adj_r2=float(1 - (1 - r2) * (n - 1) / (n - p)),
        dropped=dropped,
        resid=resid,
        fitted=dx.X @ beta,
        scores=Xhat * resid[:, None],
        bread=bread,
        extra={
            "endogenous": endogenous,
            "instrument": instrument,
            "first_stage": first,
            "reduced_form": reduced,
            "first_stage_F": f_first,
            "first_stage_coef": first.coef(instrument),
            "weak_instrument": weak,
        },
    )
    return apply_covariance(fit, cov, dx.cluster)
