"""Design matrices, fixed-effect expansion and rank checks."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from ..errors import SingularFitError

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass(frozen=True)
class DesignMatrix:
    """Outcome, named covariate columns, unexpanded fixed-effect factors, clusters.

    ``X`` includes the intercept column when there is one. Fixed effects stay
    as raw level arrays until :func:`fixed_effects_expand` turns them into
    dummy columns.
    """

    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]
    fixed_effects: Mapping[str, np.ndarray] = field(default_factory=dict)
    cluster: np.ndarray | None = None
    weights: np.ndarray | None = None
    fe_columns: frozenset[str] = frozenset()

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def drop(self, names: Sequence[str]) -> "DesignMatrix":
        keep = [k for k, nm in enumerate(self.names) if nm not in set(names)]
        return replace(self, X=self.X[:, keep], names=tuple(self.names[k] for k in keep))

    def subset(self, rows) -> "DesignMatrix":
        rows = np.asarray(rows)
        return replace(
            self,
            y=self.y[rows],
            X=self.X[rows],
            fixed_effects={k: np.asarray(v)[rows] for k, v in self.fixed_effects.items()},
            cluster=None if self.cluster is None else np.asarray(self.cluster)[rows],
            weights=None if self.weights is None else self.weights[rows],
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame, outcome: str, covariates: Sequence[str],
                   fixed_effects: Sequence[str] = (), cluster: str | None = None,
                   intercept: bool = True) -> "DesignMatrix":
        """Build from a frame, dropping rows with missing values in any used column."""
        used = [outcome, *covariates, *fixed_effects] + ([cluster] if cluster else [])
        sub = df[list(dict.fromkeys(used))].dropna()
        X = sub[list(covariates)].to_numpy(dtype=float)
        names = tuple(covariates)
        if intercept:
            X = np.column_stack([np.ones(len(sub)), X])
            names = ("const",) + names
        return cls(
            y=sub[outcome].to_numpy(dtype=float),
            X=X,
            names=names,
            fixed_effects={f: sub[f].astype(str).to_numpy() for f in fixed_effects},
            cluster=None if cluster is None else sub[cluster].astype(str).to_numpy(),
        )


def fixed_effects_expand(d: DesignMatrix) -> DesignMatrix:
    """One-hot expand each factor, dropping its lexicographically smallest level.

    A factor with a single level carries no information and is dropped with
    a warning.
    """
    if not d.fixed_effects:
        return d
    cols = [d.X]
    names = list(d.names)
    fe_cols = set(d.fe_columns)
    for fname, values in d.fixed_effects.items():
        values = np.asarray(values).astype(str)
        levels = np.unique(values)
        if len(levels) < 2:
            warnings.warn(f"fixed effect {fname!r} has a single level; dropped", stacklevel=2)
            continue
        codes = np.searchsorted(levels, values)
        dummies = np.zeros((len(values), len(levels) - 1))
        nz = codes > 0
        dummies[np.flatnonzero(nz), codes[nz] - 1] = 1.0
        cols.append(dummies)
        new = [f"{fname}[{lv}]" for lv in levels[1:]]
        names.extend(new)
        fe_cols.update(new)
    return replace(d, X=np.column_stack(cols), names=tuple(names), fixed_effects={},
                   fe_columns=frozenset(fe_cols))


def independent_columns(X: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Mask of columns kept by a greedy left-to-right rank scan.

    A column is dropped when its residual after projecting on the kept
    columns (Gram-Schmidt, reorthogonalized) is below ``tol`` times its norm,
    so earlier columns always win.
    """
    n, p = X.shape
    Q = np.zeros((n, 0))
    keep = np.zeros(p, dtype=bool)
    for k in range(p):
        x = X[:, k].astype(float)
        norm = np.linalg.norm(x)
        if norm == 0:
            continue
        r = x - Q @ (Q.T @ x)
        r = r - Q @ (Q.T @ r)
        rn = np.linalg.norm(r)
        if rn > tol * norm:
            Q = np.column_stack([Q, r / rn])
            keep[k] = True
    return keep


def collinearity_report(X: np.ndarray, names: Sequence[str], tol: float = RANK_TOL) -> list[str]:
    """Names of columns that are linear combinations of columns to their left."""
    keep = independent_columns(X, tol)
    return [names[k] for k in np.flatnonzero(~keep)]


def resolve_collinearity(d: DesignMatrix, drop_collinear: bool) -> tuple[DesignMatrix, list[str]]:
    """Return ``d`` without collinear columns, or raise when dropping is not allowed.

    Fixed-effect dummies sit to the right of the covariates, so they are the
    ones dropped; a covariate that is itself collinear is an error in either
    mode.
    """
    dropped = collinearity_report(d.X, d.names)
    if not dropped:
        return d, []
    substantive = [c for c in dropped if c not in d.fe_columns]
    if not drop_collinear or substantive:
        raise SingularFitError(f"collinear columns: {dropped}", dropped)
    log.info("dropping %d collinear fixed-effect columns", len(dropped))
    return d.drop(dropped), dropped


def within_transform(X: np.ndarray, factors: Sequence[np.ndarray], tol: float = 1e-14,
                     max_iter: int = 10_000) -> np.ndarray:
    """Sweep out every factor's group means by alternating projections."""
    Z = np.array(X, dtype=float, copy=True)
    codes = [np.unique(np.asarray(f).astype(str), return_inverse=True)[1] for f in factors]
    counts = [np.bincount(c) for c in codes]
    one_d = Z.ndim == 1
    if one_d:
        Z = Z[:, None]
    scale = max(1.0, float(np.abs(Z).max())) if Z.size else 1.0
    for _ in range(max_iter):
        delta = 0.0
        for c, n in zip(codes, counts):
            means = np.stack([np.bincount(c, weights=Z[:, j]) / n for j in range(Z.shape[1])], axis=1)
            Z -= means[c]
            delta = max(delta, float(np.abs(means).max()) if means.size else 0.0)
        if delta < tol * scale:
            break
    return Z[:, 0] if one_d else Z
