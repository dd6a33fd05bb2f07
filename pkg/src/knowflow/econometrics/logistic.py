"""Logistic regression by iteratively reweighted least squares."""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats
from scipy.special import expit

from ..errors import ConvergenceError, PerfectSeparationError
from .design import DesignMatrix
from .linear import apply_covariance, prepare
from .results import EstimationResult

log = logging.getLogger(__name__)

MAX_ITER = 100
SCORE_TOL = 1e-8
LL_TOL = 1e-10
SEPARATION_BOUND = 30.0  # |beta| on standardized columns


def _loglik(y, eta) -> float:
    # log p = -log(1 + e^-eta), log(1-p) = -log(1 + e^eta)
    return float(-(y * np.logaddexp(0, -eta) + (1 - y) * np.logaddexp(0, eta)).sum())


def _null_loglik(y, has_const: bool) -> float:
    if not has_const:
        return _loglik(y, np.zeros_like(y))
    m = y.mean()
    if m in (0.0, 1.0):
        return 0.0
    n = len(y)
    return float(n * (m * np.log(m) + (1 - m) * np.log(1 - m)))


def _column_sd(X: np.ndarray, names: Sequence[str]) -> np.ndarray:
    sd = X.std(axis=0)
    sd[[k for k, nm in enumerate(names) if nm == "const"]] = 0.0
    return sd


def _irls(X, y, max_iter):
    n, p = X.shape
    beta = np.zeros(p)
    eta = np.zeros(n)
    ll = _loglik(y, eta)
    history = []
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        score = X.T @ (y - mu)
        W = mu * (1 - mu)
        info = (X * W[:, None]).T @ X
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = X @ cand
            ll_c = _loglik(y, eta_c)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 1e-6:
                break
            t /= 2
        beta, eta = cand, eta_c
        rel = abs(ll_c - ll) / max(abs(ll), 1e-300)
        ll = ll_c
        g = float(np.abs(X.T @ (y - expit(eta))).max())
        history.append((ll, g))
        if g < SCORE_TOL or rel < LL_TOL:
            return beta, ll, it, g, True, history
    return beta, ll, max_iter, history[-1][1], False, history


def _separated(beta, sd) -> np.ndarray:
    return np.abs(beta * sd) > SEPARATION_BOUND


def logistic_fit(d: DesignMatrix, drop_collinear: bool = False, cov: str = "auto",
                 max_iter: int = MAX_ITER, drop_separated_levels: bool = True) -> EstimationResult:
    """Maximum-likelihood logit.

    Fixed-effect levels whose outcome is constant are kept unless they
    separate the data; then, with ``drop_separated_levels``, the level's rows
    and dummy are removed and the model is refit. Separation on a substantive
    covariate raises :class:`PerfectSeparationError`.
    """
    y0 = np.asarray(d.y, dtype=float)
    if not np.isin(y0, (0.0, 1.0)).all():
        raise ValueError("logistic outcome must be 0/1")
    d, dropped = prepare(d, drop_collinear)
    removed_rows = 0
    while True:
        X, y = d.X, d.y
        beta, ll, iters, gnorm, ok, history = _irls(X, y, max_iter)
        sd = _column_sd(X, d.names)
        sep = _separated(beta, sd)
        if not sep.any():
            break
        cols = [d.names[k] for k in np.flatnonzero(sep)]
        rising = len(history) > 1 and history[-1][0] > history[-2][0]
        if not all(c in d.fe_columns for c in cols) or not drop_separated_levels:
            raise PerfectSeparationError(
                f"separation on {cols}: |beta*sd| > {SEPARATION_BOUND:g}"
                f"{' with rising likelihood' if rising else ''}")
        rows = (X[:, sep] != 0).any(axis=1)
        log.info("dropping separated fixed-effect levels %s (%d rows)", cols, int(rows.sum()))
        removed_rows += int(rows.sum())
        d = d.subset(~rows).drop(cols)
        dropped = dropped + cols
        d, more = prepare(d, drop_collinear=True)
        dropped += more
    if not ok:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations; "
                               f"max |score| = {gnorm:.3g}", iters, gnorm)
    n, p = X.shape
    mu = expit(X @ beta)
    info = (X * (mu * (1 - mu))[:, None]).T @ X
    bread = linalg.inv(info)
    bread = (bread + bread.T) / 2
    has_const = "const" in d.names
    ll0 = _null_loglik(y, has_const)
    aic = 2 * p - 2 * ll
    aicc = aic + 2 * p * (p + 1) / (n - p - 1) if n - p - 1 > 0 else float("inf")
    fit = EstimationResult(
        model="logit",
        names=d.names,
        params=beta,
        cov=bread,
        cov_type="model",
        n_obs=n,
        df_inference=None,
        cov_model=bread,
        log_likelihood=ll,
        ll_null=ll0,
        mcfadden_pseudo_r2=1.0 - ll / ll0 if ll0 < 0 else float("nan"),
        aic=float(aic),
        aicc=float(aicc),
        convergence={"iterations": iters, "gradient_norm": gnorm, "converged": ok},
        dropped=dropped,
        resid=y - mu,
        fitted=mu,
        scores=X * (y - mu)[:, None],
        bread=bread,
        extra={"separated_rows_dropped": removed_rows, "X": X},
    )
    return apply_covariance(fit, cov, d.cluster)


def average_marginal_effects(fit: EstimationResult, d: DesignMatrix | None = None,
                             covariates: Sequence[str] | None = None) -> pd.DataFrame:
    """Mean of beta_k p(1-p) per covariate with delta-method standard errors.

    Uses the fitted design stored on ``fit``; ``d`` is accepted for callers
    holding the original design and is only used when the fit lacks it.
    """
    if fit.model != "logit":
        raise ValueError("marginal effects are defined for logistic fits")
    X = fit.extra.get("X")
    if X is None:
        if d is None:
            raise ValueError("design needed to compute marginal effects")
        X = d.X
    if covariates is None:
        covariates = [nm for nm in fit.names if nm != "const" and "[" not in nm]
    beta = fit.params
    mu = expit(X @ beta)
    w = mu * (1 - mu)
    dw = w * (1 - 2 * mu)
    rows = []
    for name in covariates:
        k = fit.names.index(name)
        ame = beta[k] * w.mean()
        grad = beta[k] * (dw[:, None] * X).mean(axis=0)
        grad[k] += w.mean()
        se = float(np.sqrt(max(grad @ fit.cov @ grad, 0.0)))
        rows.append({"covariate": name, "ame": float(ame), "se": se})
    out = pd.DataFrame(rows)
    z = out["ame"] / out["se"]
    out["p"] = 2 * (stats.norm.sf(np.abs(z)) if fit.df_inference is None
                    else stats.t.sf(np.abs(z), fit.df_inference))
    return out
