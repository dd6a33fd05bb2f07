"""Cox proportional hazards by Newton on the partial likelihood."""
from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .. import _kernels
from ..errors import ConvergenceError, NoEventsError
from .results import EstimationResult

MAX_ITER = 100
SCORE_TOL = 1e-9
LL_TOL = 1e-12
MONOTONE_BOUND = 30.0  # |beta| on standardized columns


def partial_loglik(durations, events, X, beta, ties: str = "efron"):
    """(log partial likelihood, score, information) at ``beta``."""
    t = np.asarray(durations, dtype=float)
    order = np.argsort(t, kind="stable")
    X = np.ascontiguousarray(np.asarray(X, dtype=float)[order])
    ev = np.asarray(events)[order].astype(np.int8)
    eta = X @ np.asarray(beta, dtype=float)
    return _kernels.efron_derivatives(t[order], ev, X, eta, ties == "breslow")


def orders_events(t_sorted, events_sorted, x_sorted) -> bool:
    """True when ``x`` is extreme in every risk set at every event (and strictly so once).

    Such a covariate sends the partial likelihood to its supremum as beta goes
    to plus or minus infinity, so no finite maximizer exists.
    """
    ev = events_sorted.astype(bool)
    if not ev.any():
        return False
    start = np.searchsorted(t_sorted, t_sorted, side="left")
    suf_max = np.maximum.accumulate(x_sorted[::-1])[::-1][start]
    suf_min = np.minimum.accumulate(x_sorted[::-1])[::-1][start]
    x = x_sorted[ev]
    hi, lo = suf_max[ev], suf_min[ev]
    top = bool((x >= hi).all() and (x > lo).any())
    bottom = bool((x <= lo).all() and (x < hi).any())
    return top or bottom


def _as_frame(covariates, controls) -> pd.DataFrame:
    parts = []
    for c in (covariates, controls):
        if c is None:
            continue
        if isinstance(c, pd.Series):
            c = c.to_frame()
        elif not isinstance(c, pd.DataFrame):
            a = np.asarray(c, dtype=float)
            a = a[:, None] if a.ndim == 1 else a
            start = sum(p.shape[1] for p in parts)
            c = pd.DataFrame(a, columns=[f"x{start + k}" for k in range(a.shape[1])])
        parts.append(c.reset_index(drop=True))
    return pd.concat(parts, axis=1) if parts else pd.DataFrame()


def cox_fit(durations, event_flags, covariates, controls=None, ties: str = "efron",
            max_iter: int = MAX_ITER) -> EstimationResult:
    """Maximum partial likelihood fit with Efron (default) or Breslow ties.

    Columns without variation have no contrast in any risk set; they keep
    beta = 0 and are listed in ``dropped``. A covariate that perfectly orders
    the events makes the likelihood monotone; that is flagged in
    ``convergence['monotone_likelihood']`` instead of raising.
    """
    if ties not in ("efron", "breslow"):
        raise ValueError("ties must be 'efron' or 'breslow'")
    frame = _as_frame(covariates, controls)
    names = tuple(str(c) for c in frame.columns)
    X_all = frame.to_numpy(dtype=float)
    t = np.asarray(durations, dtype=float)
    ev = np.asarray(event_flags).astype(bool)
    if len(t) != len(X_all) or len(ev) != len(t):
        raise ValueError("durations, events and covariates differ in length")
    if not (t > 0).all():
        raise ValueError("durations must be positive")
    if not ev.any():
        raise NoEventsError("no events; partial likelihood undefined")
    sd_all = X_all.std(axis=0)
    active = sd_all > 0
    dropped = [nm for nm, a in zip(names, active) if not a]
    X = X_all[:, active]
    sd = sd_all[active]
    n, p = X.shape

    order = np.argsort(t, kind="stable")
    ts, evs, Xs = t[order], ev[order].astype(np.int8), np.ascontiguousarray(X[order])

    def derivs(b):
        return _kernels.efron_derivatives(ts, evs, Xs, Xs @ b, ties == "breslow")

    active_names = [nm for nm, a in zip(names, active) if a]
    ordering = [nm for k, nm in enumerate(active_names) if orders_events(ts, evs, Xs[:, k])]
    beta = np.zeros(p)
    ll0, score, info = derivs(beta)
    ll = ll0
    converged = p == 0
    it = 0
    g = float(np.abs(score).max()) if p else 0.0
    # two routes: an exact ordering check and the size bound on beta
    monotone = bool(ordering)
    for it in range(1, max_iter + 1):
        if p == 0:
            break
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        s = 1.0
        while True:
            cand = beta + s * step
            ll_c, score_c, info_c = derivs(cand)
            if ll_c >= ll - 1e-12 * abs(ll) or s < 1e-6:
                break
            s /= 2
        rel = abs(ll_c - ll) / max(abs(ll), 1e-300)
        beta, ll, score, info = cand, ll_c, score_c, info_c
        g = float(np.abs(score).max())
        if np.any(np.abs(beta * sd) > MONOTONE_BOUND):
            monotone = True
        if g < SCORE_TOL or rel < LL_TOL:
            converged = True
            break
    if monotone:
        warnings.warn(f"monotone partial likelihood: {ordering or 'a covariate'} orders the events",
                      stacklevel=2)
    elif not converged:
        raise ConvergenceError(f"Cox Newton did not converge in {max_iter} iterations", it, g)

    params = np.zeros(len(names))
    params[active] = beta
    cov = np.zeros((len(names), len(names)))
    if p:
        V = linalg.pinvh(info) if monotone else linalg.inv(info)
        cov[np.ix_(active, active)] = (V + V.T) / 2
    n_events = int(ev.sum())
    lr = 2 * (ll - ll0)
    wald = float(beta @ info @ beta) if p else 0.0
    k = len(names)
    aic = 2 * p - 2 * ll
    fit = EstimationResult(
        model="cox",
        names=names,
        params=params,
        cov=cov,
        cov_type="model",
        n_obs=n,
        df_inference=None,
        cov_model=cov.copy(),
        log_likelihood=float(ll),
        ll_null=float(ll0),
        aic=float(aic),
        aicc=float(aic + 2 * p * (p + 1) / (n - p - 1)) if n - p - 1 > 0 else float("inf"),
        # Cox-Snell generalized R^2
        r2=float(1 - np.exp(-lr / n)),
        convergence={"iterations": it, "gradient_norm": g, "converged": converged,
                     "monotone_likelihood": monotone, "ordering_covariates": ordering},
        dropped=dropped,
        extra={
            "ties": ties,
            "n_events": n_events,
            "wald": wald,
            "wald_df": p,
            "wald_p": float(stats.chi2.sf(wald, p)) if p else float("nan"),
            "lr": float(lr),
            "lr_p": float(stats.chi2.sf(lr, p)) if p else float("nan"),
            "max_r2": float(1 - np.exp(2 * ll0 / n)),
            "n_covariates": k,
        },
    )
    return fit


def hazard_ratios(fit: EstimationResult) -> pd.DataFrame:
    z = stats.norm.ppf(0.975)
    return pd.DataFrame({
        "hr": np.exp(fit.params),
        "lo": np.exp(fit.params - z * fit.se),
        "hi": np.exp(fit.params + z * fit.se),
    }, index=list(fit.names))
