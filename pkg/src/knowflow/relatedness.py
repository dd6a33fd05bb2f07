"""Flow-residual relatedness between industries or occupations.

Log flows between each entity pair are regressed on the pair's maximum growth
rate and maximum log size; the residuals, rescaled to [0, 1], measure how much
more labor moves between two entities than their size and growth predict.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DegenerateNormalizationError, SingularFitError
from .flows import EmploymentVector, FlowMatrix, compute_employment, compute_flows
from .ingest import PanelDataset


@dataclass(frozen=True)
class FlowFit:
    entity_kind: str
    year: int
    entities: tuple[str, ...]
    coefficients: np.ndarray  # intercept, max growth, max log size
    r2: float
    residuals: np.ndarray  # symmetric, NaN diagonal; unfit pairs carry the minimum
    fitted: np.ndarray  # boolean pair mask of pairs that entered the regression

    @property
    def n_fitted(self) -> int:
        return int(np.triu(self.fitted, 1).sum())


@dataclass(frozen=True)
class RelatednessMatrix:
    entity_kind: str
    year: int
    entities: tuple[str, ...]
    values: np.ndarray
    fit_meta: dict = field(default_factory=dict)

    def index(self, code: str) -> int:
        return self.entities.index(code)

    def lookup(self, a: str, b: str) -> float:
        return float(self.values[self.index(a), self.index(b)])

    def reindex(self, entities: Sequence[str]) -> "RelatednessMatrix":
        """Same matrix on another entity universe; unknown entities get 0 (1 on the diagonal)."""
        entities = tuple(entities)
        if entities == self.entities:
            return self
        pos = {e: k for k, e in enumerate(self.entities)}
        src = np.array([pos.get(e, -1) for e in entities])
        out = np.zeros((len(entities), len(entities)))
        ok = src >= 0
        out[np.ix_(ok, ok)] = self.values[np.ix_(src[ok], src[ok])]
        np.fill_diagonal(out, 1.0)
        return RelatednessMatrix(self.entity_kind, self.year, entities, out, dict(self.fit_meta))

    def to_long(self) -> pd.DataFrame:
        n = len(self.entities)
        ent = np.asarray(self.entities, dtype=object)
        a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return pd.DataFrame({
            "entity_a": ent[a.ravel()],
            "entity_b": ent[b.ravel()],
            "value": self.values.ravel(),
        })

    @classmethod
    def from_long(cls, frame: pd.DataFrame, entity_kind: str, year: int,
                  fit_meta: Mapping | None = None) -> "RelatednessMatrix":
        entities = tuple(sorted(set(frame["entity_a"].astype(str)) | set(frame["entity_b"].astype(str))))
        pos = {e: k for k, e in enumerate(entities)}
        values = np.zeros((len(entities), len(entities)))
        ia = frame["entity_a"].astype(str).map(pos).to_numpy()
        ib = frame["entity_b"].astype(str).map(pos).to_numpy()
        values[ia, ib] = frame["value"].to_numpy(dtype=float)
        return cls(entity_kind, int(year), entities, values, dict(fit_meta or {}))


def _pair_design(flows: FlowMatrix, employment: EmploymentVector):
    if flows.entities != employment.entities:
        raise ValueError("flow and employment entity universes differ")
    n = len(flows.entities)
    iu, ju = np.triu_indices(n, 1)
    F = flows.counts[iu, ju]
    g = employment.g
    with np.errstate(divide="ignore"):
        logL = np.log(employment.L)
    gmax = np.maximum(g[iu], g[ju])  # NaN if either growth undefined
    lmax = np.maximum(logL[iu], logL[ju])
    ok = (F > 0) & np.isfinite(gmax) & np.isfinite(lmax)
    return iu, ju, F, gmax, lmax, ok


def fit_flow_regression(flows: FlowMatrix, employment: EmploymentVector) -> FlowFit:
    """OLS of log flow on (1, max growth, max log size) over pairs with positive flow.

    Pairs without positive flow or with an undefined regressor are left out
    of the fit and assigned the smallest fitted residual.
    """
    n = len(flows.entities)
    iu, ju, F, gmax, lmax, ok = _pair_design(flows, employment)
    if ok.sum() < 3:
        raise SingularFitError(f"only {int(ok.sum())} pairs with positive flow and defined regressors")
    X = np.column_stack([np.ones(ok.sum()), gmax[ok], lmax[ok]])
    y = np.log(F[ok])
    beta, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    if rank < 3 or sv[-1] <= 1e-10 * sv[0]:
        raise SingularFitError("flow regression design is rank deficient", dropped=["g_max", "L_max"])
    e = y - X @ beta
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(e @ e) / tss if tss > 0 else float("nan")
    pair_res = np.full(len(iu), e.min())
    pair_res[ok] = e
    res = np.full((n, n), np.nan)
    res[iu, ju] = pair_res
    res[ju, iu] = pair_res
    fitted = np.zeros((n, n), dtype=bool)
    fitted[iu[ok], ju[ok]] = True
    fitted[ju[ok], iu[ok]] = True
    return FlowFit(flows.entity_kind, flows.year, flows.entities, beta, r2, res, fitted)


def minmax_scale(values) -> np.ndarray:
    """Rescale to [0, 1] by (v - min) / (max - min); NaNs pass through."""
    v = np.asarray(values, dtype=float)
    lo, hi = np.nanmin(v), np.nanmax(v)
    span = hi - lo
    if not span > 1e-12 * max(1.0, abs(hi), abs(lo)):
        raise DegenerateNormalizationError("residuals have zero range; relatedness undefined")
    return (v - lo) / span


def normalize_residuals(fit: FlowFit) -> RelatednessMatrix:
    n = len(fit.entities)
    off = ~np.eye(n, dtype=bool)
    values = np.ones((n, n))
    values[off] = minmax_scale(fit.residuals[off])
    meta = {
        "beta0": float(fit.coefficients[0]),
        "beta1": float(fit.coefficients[1]),
        "beta2": float(fit.coefficients[2]),
        "r2": float(fit.r2),
        "n_pairs": int(n * (n - 1) // 2),
        "n_fitted": fit.n_fitted,
    }
    return RelatednessMatrix(fit.entity_kind, fit.year, fit.entities, values, meta)


def relatedness_for_year(panel: PanelDataset, entity_kind: str, year: int) -> RelatednessMatrix:
    """Relatedness from flows between ``year - 1`` and ``year``."""
    flows = compute_flows(panel, entity_kind, year)
    emp = compute_employment(panel, entity_kind, year)
    return normalize_residuals(fit_flow_regression(flows, emp))


def pooled_relatedness(panel: PanelDataset, entity_kind: str, years: Sequence[int]) -> RelatednessMatrix:
    """One regression on stacked (pair, year) rows; pair residuals averaged over years."""
    rows = []
    n = None
    entities = None
    for t in years:
        flows = compute_flows(panel, entity_kind, t)
        emp = compute_employment(panel, entity_kind, t)
        iu, ju, F, gmax, lmax, ok = _pair_design(flows, emp)
        n, entities = len(flows.entities), flows.entities
        rows.append(pd.DataFrame({"i": iu[ok], "j": ju[ok], "y": np.log(F[ok]),
                                  "g": gmax[ok], "l": lmax[ok]}))
    if not rows:
        raise ValueError("no years to pool")
    d = pd.concat(rows, ignore_index=True)
    if len(d) < 3:
        raise SingularFitError("fewer than 3 pooled pairs with positive flow")
    X = np.column_stack([np.ones(len(d)), d["g"], d["l"]])
    beta, _, rank, _ = np.linalg.lstsq(X, d["y"].to_numpy(), rcond=None)
    if rank < 3:
        raise SingularFitError("pooled flow regression is rank deficient")
    d["e"] = d["y"].to_numpy() - X @ beta
    mean_e = d.groupby(["i", "j"])["e"].mean()
    iu, ju = np.triu_indices(n, 1)
    pair = pd.Series(mean_e.min(), index=pd.MultiIndex.from_arrays([iu, ju]))
    pair.loc[mean_e.index] = mean_e.to_numpy()
    res = np.full((n, n), np.nan)
    res[iu, ju] = pair.to_numpy()
    res[ju, iu] = pair.to_numpy()
    fitted = np.zeros((n, n), dtype=bool)
    fit = FlowFit(entity_kind, int(max(years)), entities, beta, float("nan"), res, fitted)
    return normalize_residuals(fit)


@dataclass(frozen=True)
class TrimmedNetwork:
    nodes: tuple[str, ...]
    edges: list[tuple[str, str, float]]
    threshold: float
    n_components: int
    spanning_forest: bool  # True when the full positive-weight graph is disconnected

    def edge_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.edges, columns=["source", "target", "weight"])


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def maximum_spanning_forest(weights: np.ndarray) -> list[tuple[int, int]]:
    """Kruskal on positive-weight pairs; ties go to the lexicographically smaller pair."""
    n = weights.shape[0]
    iu, ju = np.triu_indices(n, 1)
    w = weights[iu, ju]
    pos = w > 0
    iu, ju, w = iu[pos], ju[pos], w[pos]
    order = np.lexsort((ju, iu, -w))
    uf = _UnionFind(n)
    tree = []
    for k in order:
        if uf.union(int(iu[k]), int(ju[k])):
            tree.append((int(iu[k]), int(ju[k])))
            if len(tree) == n - 1:
                break
    return tree


def default_threshold(m: RelatednessMatrix) -> float:
    off = m.values[~np.eye(len(m.entities), dtype=bool)]
    return float(np.percentile(off, 95)) if off.size else 1.0


def trim_network(m: RelatednessMatrix, threshold: float | None = None) -> TrimmedNetwork:
    """Maximum spanning tree plus every edge heavier than ``threshold``."""
    if threshold is None:
        threshold = default_threshold(m)
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    W = np.array(m.values, dtype=float)
    np.fill_diagonal(W, 0.0)
    n = len(m.entities)
    tree = maximum_spanning_forest(W)
    keep = set(tree)
    iu, ju = np.triu_indices(n, 1)
    above = W[iu, ju] > threshold
    keep.update(zip(iu[above].tolist(), ju[above].tolist()))
    n_comp = n - len(tree)
    edges = [(m.entities[a], m.entities[b], float(W[a, b])) for a, b in sorted(keep)]
    return TrimmedNetwork(tuple(m.entities), edges, float(threshold), n_comp, n_comp > 1)


def node_table(entities: Sequence[str], parent_of: Mapping[str, str] | None = None) -> pd.DataFrame:
    parent_of = parent_of or {}
    return pd.DataFrame({
        "entity": list(entities),
        "parent_code": [parent_of.get(e, "") for e in entities],
    })
