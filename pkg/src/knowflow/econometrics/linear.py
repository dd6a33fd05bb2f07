"""Least squares with fixed effects and sandwich covariances."""
from __future__ import annotations

import numpy as np
from scipy import linalg

from ..errors import SingularFitError
from .design import DesignMatrix, fixed_effects_expand, resolve_collinearity
from .results import EstimationResult, clustered_covariance, robust_covariance


def prepare(d: DesignMatrix, drop_collinear: bool = False) -> tuple[DesignMatrix, list[str]]:
    """Expand fixed effects and strip (or reject) collinear columns."""
    d = fixed_effects_expand(d)
    d, dropped = resolve_collinearity(d, drop_collinear)
    if d.n <= d.p:
        raise SingularFitError(f"n = {d.n} observations for p = {d.p} parameters", dropped)
    return d, dropped


def _qr_solve(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares solution and (X'X)^-1 through QR of the column-scaled design."""
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Q, R = linalg.qr(X / scale, mode="economic")
    beta = linalg.solve_triangular(R, Q.T @ y) / scale
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    XtX_inv = (Rinv @ Rinv.T) / np.outer(scale, scale)
    return beta, (XtX_inv + XtX_inv.T) / 2


def apply_covariance(fit: EstimationResult, cov: str, cluster) -> EstimationResult:
    if cov == "auto":
        cov = "cluster" if cluster is not None else "model"
    if cov == "cluster":
        V, G = clustered_covariance(fit.scores, fit.bread, cluster)
        fit.cov, fit.n_clusters, fit.df_inference = V, G, G - 1
    elif cov == "robust":
        fit.cov = robust_covariance(fit.scores, fit.bread)
    elif cov != "model":
        raise ValueError(f"unknown covariance type {cov!r}")
    fit.cov_type = cov
    return fit


def ols_fit(d: DesignMatrix, drop_collinear: bool = False, cov: str = "auto") -> EstimationResult:
    """OLS with optional fixed effects; ``cov`` is auto, model, robust or cluster.

    ``auto`` clusters when the design carries cluster identifiers.
    """
    d, dropped = prepare(d, drop_collinear)
    X, y = d.X, d.y
    if d.weights is not None:
        sw = np.sqrt(np.asarray(d.weights, dtype=float))
        X, y = X * sw[:, None], y * sw
    n, p = X.shape
    beta, XtX_inv = _qr_solve(X, y)
    fitted = X @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    has_const = "const" in d.names
    tss = float(((y - y.mean()) ** 2).sum()) if has_const else float(y @ y)
    df_model = p - 1 if has_const else p
    df_resid = n - p
    sigma2 = rss / df_resid
    r2 = 1.0 - rss / tss if tss > 0 else float("nan")
    adj = 1.0 - (1.0 - r2) * (n - 1 if has_const else n) / df_resid
    f = ((tss - rss) / df_model) / sigma2 if df_model > 0 and sigma2 > 0 else float("nan")
    ll = -0.5 * n * (np.log(2 * np.pi) + np.log(rss / n) + 1.0)
    k = p + 1  # variance counts as a parameter
    aic = 2 * k - 2 * ll
    aicc = aic + 2 * k * (k + 1) / (n - k - 1) if n - k - 1 > 0 else float("inf")
    fit = EstimationResult(
        model="ols",
        names=d.names,
        params=beta,
        cov=sigma2 * XtX_inv,
        cov_type="model",
        n_obs=n,
        df_inference=df_resid,
        cov_model=sigma2 * XtX_inv,
        log_likelihood=float(ll),
        aic=float(aic),
        aicc=float(aicc),
        r2=float(r2),
        adj_r2=float(adj),
        f_statistic=float(f),
        f_df=(float(df_model), float(df_resid)),
        dropped=dropped,
        resid=resid,
        fitted=fitted,
        scores=X * resid[:, None],
        bread=XtX_inv,
    )
    return apply_covariance(fit, cov, d.cluster)
