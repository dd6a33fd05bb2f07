"""Year-over-year labor flows and employment sizes for industries and occupations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import _kernels
from .ingest import PanelDataset

ENTITY_COLUMNS = {"industry": "industry", "occupation": "occupation"}


def _column(kind: str) -> str:
    try:
        return ENTITY_COLUMNS[kind]
    except KeyError:
        raise ValueError(f"entity_kind must be one of {sorted(ENTITY_COLUMNS)}, got {kind!r}") from None


@dataclass(frozen=True)
class FlowMatrix:
    """Symmetric worker-move counts between entities from ``year - 1`` to ``year``.

    Off-diagonal entries hold moves in both directions; the diagonal holds
    workers seen in the same entity both years. Entries are fractional when a
    worker has several entities in a year (each worker carries total weight 1).
    """

    entity_kind: str
    year: int
    entities: tuple[str, ...]
    counts: np.ndarray

    def to_triplets(self) -> pd.DataFrame:
        iu, ju = np.triu_indices(len(self.entities))
        vals = self.counts[iu, ju]
        nz = vals > 0
        ent = np.asarray(self.entities, dtype=object)
        return pd.DataFrame({"entity_a": ent[iu[nz]], "entity_b": ent[ju[nz]], "count": vals[nz]})


@dataclass(frozen=True)
class EmploymentVector:
    entity_kind: str
    year: int
    entities: tuple[str, ...]
    L: np.ndarray
    L_prev: np.ndarray
    g: np.ndarray  # NaN where either year's size is zero


def _worker_entity_pairs(panel: PanelDataset, col: str, year: int) -> pd.DataFrame:
    s = panel.spells
    mask = (s["year"] == year).to_numpy()
    w = s["worker_id"].cat.codes.to_numpy()[mask]
    e = s[col].cat.codes.to_numpy()[mask]
    df = pd.DataFrame({"w": w, "e": e}).drop_duplicates()
    df["k"] = df.groupby("w")["e"].transform("size")
    return df


def compute_flows(panel: PanelDataset, entity_kind: str, year: int) -> FlowMatrix:
    col = _column(entity_kind)
    panel.require_same_epoch(year - 1, year)
    entities = tuple(panel.labels(col))
    prev = _worker_entity_pairs(panel, col, year - 1)
    curr = _worker_entity_pairs(panel, col, year)
    pairs = prev.merge(curr, on="w", suffixes=("_a", "_b"))
    weight = 1.0 / (pairs["k_a"].to_numpy() * pairs["k_b"].to_numpy())
    counts = _kernels.pair_flows(
        pairs["e_a"].to_numpy().astype(np.int64),
        pairs["e_b"].to_numpy().astype(np.int64),
        weight.astype(np.float64),
        len(entities),
    )
    return FlowMatrix(entity_kind, int(year), entities, counts)


def compute_employment(panel: PanelDataset, entity_kind: str, year: int) -> EmploymentVector:
    col = _column(entity_kind)
    entities = tuple(panel.labels(col))
    n = len(entities)

    def sizes(y):
        d = _worker_entity_pairs(panel, col, y)
        return np.bincount(d["e"].to_numpy(), minlength=n).astype(np.float64)

    L = sizes(year)
    L_prev = sizes(year - 1)
    g = np.full(n, np.nan)
    ok = (L > 0) & (L_prev > 0)
    g[ok] = np.log(L[ok]) - np.log(L_prev[ok])
    return EmploymentVector(entity_kind, int(year), entities, L, L_prev, g)
