"""Fitted-model container and sandwich covariance estimators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from ..errors import SingleClusterError


@dataclass
class EstimationResult:
    model: str
    names: tuple[str, ...]
    params: np.ndarray
    cov: np.ndarray
    cov_type: str
    n_obs: int
    df_inference: float | None = None  # t reference df; None means normal
    cov_model: np.ndarray | None = None
    log_likelihood: float | None = None
    ll_null: float | None = None
    mcfadden_pseudo_r2: float | None = None
    aic: float | None = None
    aicc: float | None = None
    r2: float | None = None
    adj_r2: float | None = None
    f_statistic: float | None = None
    f_df: tuple[float, float] | None = None
    n_clusters: int | None = None
    convergence: dict = field(default_factory=dict)
    dropped: list[str] = field(default_factory=list)
    resid: np.ndarray | None = field(default=None, repr=False)
    fitted: np.ndarray | None = field(default=None, repr=False)
    scores: np.ndarray | None = field(default=None, repr=False)
    bread: np.ndarray | None = field(default=None, repr=False)
    extra: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.params)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    @property
    def tvalues(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.params / self.se

    @property
    def pvalues(self) -> np.ndarray:
        t = np.abs(self.tvalues)
        if self.df_inference is None:
            return 2 * stats.norm.sf(t)
        return 2 * stats.t.sf(t, self.df_inference)

    @property
    def f_pvalue(self) -> float | None:
        if self.f_statistic is None or self.f_df is None:
            return None
        return float(stats.f.sf(self.f_statistic, *self.f_df))

    def _idx(self, name: str) -> int:
        return self.names.index(name)

    def coef(self, name: str) -> float:
        return float(self.params[self._idx(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self._idx(name)])

    def pvalue_of(self, name: str) -> float:
        return float(self.pvalues[self._idx(name)])

    def coef_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"coef": self.params, "se": self.se, "t": self.tvalues, "p": self.pvalues},
            index=list(self.names),
        )

    def stats_dict(self) -> dict:
        keys = ("model", "cov_type", "n_obs", "df_inference", "log_likelihood", "ll_null",
                "mcfadden_pseudo_r2", "aic", "aicc", "r2", "adj_r2", "f_statistic",
                "n_clusters")
        out = {k: getattr(self, k) for k in keys}
        out["f_df"] = list(self.f_df) if self.f_df else None
        out["f_pvalue"] = self.f_pvalue
        out["convergence"] = dict(self.convergence)
        out["dropped"] = list(self.dropped)
        return out


def _cluster_codes(cluster) -> np.ndarray:
    return pd.factorize(pd.Series(np.asarray(cluster)).astype(str), sort=True)[0]


def cluster_meat(scores: np.ndarray, cluster) -> tuple[np.ndarray, int]:
    codes = _cluster_codes(cluster)
    G = int(codes.max()) + 1 if len(codes) else 0
    summed = np.zeros((G, scores.shape[1]))
    np.add.at(summed, codes, scores)
    return summed.T @ summed, G


def clustered_covariance(scores: np.ndarray, bread: np.ndarray, cluster) -> tuple[np.ndarray, int]:
    """Cluster sandwich with the G/(G-1) * (n-1)/(n-p) small-sample factor."""
    n, p = scores.shape
    meat, G = cluster_meat(scores, cluster)
    if G < 2:
        raise SingleClusterError("clustered covariance needs at least 2 clusters")
    factor = G / (G - 1) * (n - 1) / (n - p)
    V = factor * bread @ meat @ bread
    return (V + V.T) / 2, G


def robust_covariance(scores: np.ndarray, bread: np.ndarray) -> np.ndarray:
    """Heteroskedasticity-robust (HC1) sandwich."""
    n, p = scores.shape
    V = n / (n - p) * bread @ (scores.T @ scores) @ bread
    return (V + V.T) / 2


def clustered_se(fit: EstimationResult, d) -> np.ndarray:
    """Cluster-robust covariance of ``fit`` using the clusters carried by ``d``."""
    if d.cluster is None:
        raise SingleClusterError("design carries no cluster identifiers")
    V, _ = clustered_covariance(fit.scores, fit.bread, d.cluster)
    return V


def use_clustered(fit: EstimationResult, cluster) -> EstimationResult:
    """Switch ``fit`` to cluster-robust inference in place and return it."""
    V, G = clustered_covariance(fit.scores, fit.bread, cluster)
    fit.cov = V
    fit.cov_type = "cluster"
    fit.n_clusters = G
    fit.df_inference = G - 1
    return fit
