"""Related-industry labor-supply shock (shift-share instrument).

For region r and industry i the shock averages the national growth of every
other industry i', computed without region r, with weights proportional to
relatedness(i, i') times local employment of i' in r.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .ingest import PanelDataset
from .relatedness import RelatednessMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShockComponent:
    industry: str
    growth: float  # leave-one-out growth of this industry
    weight: float  # relatedness x local employment
    share: float


@dataclass(frozen=True)
class BartikShock:
    region: str
    industry: str
    year: int
    value: float  # NaN when undefined
    components: tuple[ShockComponent, ...] = ()
    reason: str = ""

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def defined(self) -> bool:
        return bool(np.isfinite(self.value))


def region_industry_employment(panel: PanelDataset, year: int) -> np.ndarray:
    """Distinct workers per (region, industry) in ``year``; rows follow region labels."""
    s = panel.spells
    m = (s["year"] == year).to_numpy()
    R, I = len(panel.labels("region")), len(panel.labels("industry"))
    cells = pd.DataFrame({
        "w": panel.codes("worker_id")[m],
        "r": panel.codes("region")[m],
        "i": panel.codes("industry")[m],
    }).drop_duplicates()
    out = np.zeros((R, I))
    np.add.at(out, (cells["r"].to_numpy(), cells["i"].to_numpy()), 1.0)
    return out


def leave_one_out_growth_matrix(L_now: np.ndarray, L_prev: np.ndarray) -> np.ndarray:
    """[region, industry] log growth of national employment excluding the region; NaN if undefined."""
    ex_now = L_now.sum(axis=0)[None, :] - L_now
    ex_prev = L_prev.sum(axis=0)[None, :] - L_prev
    g = np.full(L_now.shape, np.nan)
    ok = (ex_now > 0) & (ex_prev > 0)
    g[ok] = np.log(ex_now[ok]) - np.log(ex_prev[ok])
    return g


def leave_one_out_growth(panel: PanelDataset, industry: str, region: str, year: int) -> float:
    """Log growth t-1 -> t of ``industry`` employment outside ``region``; NaN when undefined."""
    panel.require_same_epoch(year - 1, year)
    s = panel.spells
    sel = s[(s["industry"] == industry) & (s["region"] != region)]

    def size(y):
        return sel.loc[sel["year"] == y, "worker_id"].nunique()

    now, prev = size(year), size(year - 1)
    if now == 0 or prev == 0:
        return float("nan")
    return float(np.log(now) - np.log(prev))


def compute_bartik(phi: RelatednessMatrix, local_employment: Mapping[str, float] | Sequence[float],
                   growths: Mapping[str, float] | Sequence[float], region: str, industry: str,
                   year: int) -> BartikShock:
    """Shock for one (region, industry, year) cell.

    ``local_employment`` and ``growths`` are keyed by industry (or aligned
    with ``phi.entities``). Industries with undefined growth are dropped and
    the remaining weights renormalized.
    """
    ents = phi.entities
    L = _align(local_employment, ents)
    g = _align(growths, ents)
    k = phi.index(industry)
    w = phi.values[k] * L
    use = np.ones(len(ents), dtype=bool)
    use[k] = False
    use &= np.isfinite(g) & (w > 0)
    denom = float(w[use].sum())
    if not denom > 0:
        return BartikShock(region, industry, int(year), float("nan"), (), "zero_denominator")
    shares = w[use] / denom
    comps = tuple(ShockComponent(ents[j], float(g[j]), float(w[j]), float(s))
                  for j, s in zip(np.flatnonzero(use), shares))
    return BartikShock(region, industry, int(year), float(shares @ g[use]), comps)


def _align(values, entities) -> np.ndarray:
    if isinstance(values, Mapping):
        return np.array([float(values.get(e, np.nan)) for e in entities])
    a = np.asarray(values, dtype=float)
    if len(a) != len(entities):
        raise ValueError("vector length differs from the relatedness entity list")
    return a


def shock_grid(phi: np.ndarray, L_local: np.ndarray, g_loo: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized shocks for every (region, industry): (value, n_components).

    ``phi`` is [industry, industry]; ``L_local`` and ``g_loo`` are [region, industry].
    """
    R, I = L_local.shape
    W = phi[None, :, :] * L_local[:, None, :]  # [r, i, i']
    W[:, np.arange(I), np.arange(I)] = 0.0
    ok = np.isfinite(g_loo)[:, None, :] & (W > 0)
    W = np.where(ok, W, 0.0)
    denom = W.sum(axis=2)
    num = (W * np.where(np.isfinite(g_loo), g_loo, 0.0)[:, None, :]).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(denom > 0, num / denom, np.nan)
    return value, ok.sum(axis=2)


def local_growth_grid(L_local: np.ndarray, g_loo: np.ndarray) -> np.ndarray:
    """[region, industry] employment-weighted mean growth of the other local industries.

    The same shares as the shock without the relatedness weights: the overall
    local demand shift, used as a control.
    """
    ok = np.isfinite(g_loo)
    W = np.where(ok, L_local, 0.0)
    g = np.where(ok, g_loo, 0.0)
    num = (W * g).sum(axis=1, keepdims=True) - W * g
    den = W.sum(axis=1, keepdims=True) - W
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, np.nan)


def bartik_table(panel: PanelDataset, phi_by_year: Mapping[int, RelatednessMatrix],
                 cells: Iterable[tuple[str, str, int]] | None = None,
                 local_year: str = "t") -> pd.DataFrame:
    """Shock table with columns region, industry, year, B, n_components, g_own, g_local.

    ``g_own`` is the cell's own leave-one-out growth (the exogenous industry
    growth control); ``g_local`` the unweighted local shift of the other
    industries (:func:`local_growth_grid`). ``local_year`` picks the employment year of the weights:
    ``"t"`` or ``"t-1"``. Without ``cells`` every cell of every year in
    ``phi_by_year`` is reported.
    """
    if local_year not in ("t", "t-1"):
        raise ValueError("local_year must be 't' or 't-1'")
    regions = panel.labels("region")
    industries = panel.labels("industry")
    wanted: dict[int, list[tuple[str, str]]] | None = None
    if cells is not None:
        wanted = {}
        for r, i, t in cells:
            wanted.setdefault(int(t), []).append((str(r), str(i)))
    frames = []
    years = sorted(wanted) if wanted is not None else sorted(phi_by_year)
    rpos = {r: k for k, r in enumerate(regions)}
    ipos = {i: k for k, i in enumerate(industries)}
    for t in years:
        panel.require_same_epoch(t - 1, t)
        L_now = region_industry_employment(panel, t)
        L_prev = region_industry_employment(panel, t - 1)
        g = leave_one_out_growth_matrix(L_now, L_prev)
        phi = phi_by_year[t].reindex(industries).values
        L_w = L_now if local_year == "t" else L_prev
        value, ncomp = shock_grid(phi, L_w, g)
        g_local = local_growth_grid(L_w, g)
        if wanted is None:
            rr, ii = np.meshgrid(np.arange(len(regions)), np.arange(len(industries)), indexing="ij")
            rr, ii = rr.ravel(), ii.ravel()
        else:
            pairs = sorted(set(wanted[t]))
            rr = np.array([rpos[r] for r, _ in pairs], dtype=int)
            ii = np.array([ipos[i] for _, i in pairs], dtype=int)
        frames.append(pd.DataFrame({
            "region": np.asarray(regions, dtype=object)[rr],
            "industry": np.asarray(industries, dtype=object)[ii],
            "year": t,
            "B": value[rr, ii],
            "n_components": ncomp[rr, ii].astype(int),
            "g_own": g[rr, ii],
            "g_local": g_local[rr, ii],
        }))
    cols = ["region", "industry", "year", "B", "n_components", "g_own", "g_local"]
    if not frames:
        return pd.DataFrame(columns=cols)
    out = pd.concat(frames, ignore_index=True)[cols]
    n_undef = int(out["B"].isna().sum())
    if n_undef:
        log.info("%d shock cells undefined (no related local employment)", n_undef)
    return out
