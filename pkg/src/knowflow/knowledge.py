"""Knowledge stocks a new firm acquires through its first hires.

Per firm: industry knowledge (roster-averaged relatedness between the firm's
industry and the hires' recent industries), occupation knowledge (the same for
each hire's current versus recent occupations), mean schooling, local
knowledge (share of hires with recent work in the firm's region), and the
controls log initial size and log average wage.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import _kernels
from .errors import NotFoundError, ZeroVarianceError
from .ingest import PanelDataset, worker_history
from .pioneers import FirmRecord
from .relatedness import RelatednessMatrix

KNOWLEDGE_FIELDS = ("Phi", "Psi", "edu", "rho")
CONTROL_FIELDS = ("log_n0", "log_w")
LOOKBACK = 2

# histories: worker_id -> [(year, industry, occupation, region), ...]
Histories = Mapping[str, Sequence[tuple[int, str, str, str]]]


def collect_histories(panel: PanelDataset, firm: FirmRecord, lookback: int = LOOKBACK) -> dict:
    return {w: worker_history(panel, w, firm.birth_year, lookback) for w, _ in firm.initial_roster}


def _roster_mean(firm: FirmRecord, per_worker) -> float:
    if not firm.initial_roster:
        return float("nan")
    return float(np.mean([per_worker(w, o) for w, o in firm.initial_roster]))


def industry_knowledge(firm: FirmRecord, histories: Histories, phi: RelatednessMatrix) -> float:
    if firm.industry not in phi.entities:
        raise NotFoundError(f"industry {firm.industry!r} missing from relatedness matrix")

    def contrib(worker, _occ):
        prior = sorted({h[1] for h in histories.get(worker, ())})
        if not prior:
            return 0.0
        return float(np.mean([phi.lookup(firm.industry, p) if p in phi.entities else 0.0
                              for p in prior]))

    return _roster_mean(firm, contrib)


def occupation_knowledge(firm: FirmRecord, histories: Histories, psi: RelatednessMatrix) -> float:
    def contrib(worker, occ):
        if occ not in psi.entities:
            raise NotFoundError(f"occupation {occ!r} missing from relatedness matrix")
        prior = sorted({h[2] for h in histories.get(worker, ())})
        if not prior:
            return 0.0
        return float(np.mean([psi.lookup(occ, p) if p in psi.entities else 0.0 for p in prior]))

    return _roster_mean(firm, contrib)


def local_knowledge(firm: FirmRecord, histories: Histories) -> float:
    return _roster_mean(
        firm, lambda w, _o: float(any(h[3] == firm.region for h in histories.get(w, ())))
    )


def schooling(firm: FirmRecord, years_by_worker: Mapping[str, float]) -> float:
    return _roster_mean(firm, lambda w, _o: float(years_by_worker[w]))


def standardize(frame: pd.DataFrame, fields: Sequence[str] = KNOWLEDGE_FIELDS,
                suffix: str = "_z") -> pd.DataFrame:
    """Add ``<field><suffix>`` columns: (x - mean) / sd with the n-1 sd."""
    if len(frame) < 2:
        raise ValueError("standardization needs at least 2 samples")
    out = frame.copy()
    for f in fields:
        x = frame[f].to_numpy(dtype=float)
        sd = x.std(ddof=1)
        if not sd > 0:
            raise ZeroVarianceError(f)
        out[f + suffix] = (x - x.mean()) / sd
    return out


def _ragged(focal, owner, prior_owner, prior_code, matrix):
    """Per-row mean of matrix[focal[row], prior codes owned by the row's owner]."""
    order = np.argsort(prior_owner, kind="stable")
    p_owner, p_code = prior_owner[order], prior_code[order]
    lo = np.searchsorted(p_owner, owner, side="left")
    hi = np.searchsorted(p_owner, owner, side="right")
    counts = hi - lo
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    idx = np.arange(offsets[-1]) + np.repeat(lo - offsets[:-1], counts)
    return _kernels.ragged_relatedness(
        np.asarray(focal, dtype=np.int64), offsets,
        p_code[idx].astype(np.int64), np.ascontiguousarray(matrix, dtype=np.float64),
    )


def knowledge_profiles(panel: PanelDataset, firms: Sequence[FirmRecord],
                       phi_by_year: Mapping[int, RelatednessMatrix],
                       psi_by_year: Mapping[int, RelatednessMatrix],
                       lookback: int = LOOKBACK) -> pd.DataFrame:
    """Vectorized knowledge profile for each firm, indexed by firm_id.

    Each firm uses the relatedness matrices of its birth year and the
    ``lookback`` years of history before it.
    """
    s = panel.spells
    ind_labels = panel.labels("industry")
    occ_labels = panel.labels("occupation")
    reg_labels = panel.labels("region")
    wcode = s["worker_id"].cat.codes.to_numpy()
    fcode = s["firm_id"].cat.codes.to_numpy()
    years = s["year"].to_numpy()
    icode = s["industry"].cat.codes.to_numpy()
    ocode = s["occupation"].cat.codes.to_numpy()
    rcode = s["region"].cat.codes.to_numpy()
    firm_pos = {f: k for k, f in enumerate(s["firm_id"].cat.categories)}
    ind_pos = {c: k for k, c in enumerate(ind_labels)}
    reg_pos = {c: k for k, c in enumerate(reg_labels)}

    frames = []
    by_year: dict[int, list[FirmRecord]] = {}
    for f in firms:
        by_year.setdefault(f.birth_year, []).append(f)
    for t, cohort in sorted(by_year.items()):
        phi = phi_by_year[t].reindex(ind_labels).values
        psi = psi_by_year[t].reindex(occ_labels).values
        fc = np.array([firm_pos[f.firm_id] for f in cohort])
        f_ind = np.array([ind_pos[f.industry] for f in cohort])
        f_reg = np.array([reg_pos[f.region] for f in cohort])
        row_of_firm = np.full(len(firm_pos), -1)
        row_of_firm[fc] = np.arange(len(cohort))

        at_t = years == t
        in_cohort = at_t & (row_of_firm[fcode] >= 0)
        r_firm = row_of_firm[fcode[in_cohort]]
        r_worker = wcode[in_cohort]
        r_occ = ocode[in_cohort]
        r_school = s["schooling_years"].to_numpy()[in_cohort]
        r_wage = s["wage"].to_numpy()[in_cohort]

        lo, hi = panel.epoch_window(t, lookback)
        hmask = (years >= lo) & (years <= hi) & np.isin(wcode, r_worker)
        h = pd.DataFrame({"w": wcode[hmask], "i": icode[hmask], "o": ocode[hmask], "r": rcode[hmask]})
        hi_ = h[["w", "i"]].drop_duplicates()
        ho_ = h[["w", "o"]].drop_duplicates()
        hr_ = h[["w", "r"]].drop_duplicates()

        phi_w = _ragged(f_ind[r_firm], r_worker, hi_["w"].to_numpy(), hi_["i"].to_numpy(), phi)
        psi_w = _ragged(r_occ, r_worker, ho_["w"].to_numpy(), ho_["o"].to_numpy(), psi)
        n_reg = len(reg_labels)
        seen = hr_["w"].to_numpy().astype(np.int64) * n_reg + hr_["r"].to_numpy()
        rho_w = np.isin(r_worker.astype(np.int64) * n_reg + f_reg[r_firm], seen).astype(float)

        n = len(cohort)
        n0 = np.bincount(r_firm, minlength=n).astype(float)

        def mean(v):
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.bincount(r_firm, weights=v, minlength=n) / n0

        w_mean = mean(r_wage)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_w = np.where(w_mean > 0, np.log(w_mean), np.nan)
            log_n0 = np.where(n0 > 0, np.log(n0), np.nan)
        frames.append(pd.DataFrame({
            "firm_id": [f.firm_id for f in cohort],
            "birth_year": t,
            "Phi": mean(phi_w),
            "Psi": mean(psi_w),
            "edu": mean(r_school),
            "rho": mean(rho_w),
            "log_n0": log_n0,
            "log_w": log_w,
        }))
    if not frames:
        return pd.DataFrame(columns=["firm_id", "birth_year", *KNOWLEDGE_FIELDS, *CONTROL_FIELDS]).set_index("firm_id")
    return pd.concat(frames, ignore_index=True).set_index("firm_id")
