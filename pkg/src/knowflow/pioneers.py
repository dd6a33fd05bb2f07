"""New-firm and pioneer classification, firm death, and three-year outcomes.

A firm is new in year t when it has spells in t and none in the six years
before. A new firm is a pioneer when its (industry, region) cell had no
employment in t-2 and t-1; for later cohorts the firm must also report in
t+1. A firm dies in the first year y it reports in y-1 but in neither y nor
y+1.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .ingest import PanelDataset, firm_activity_series

log = logging.getLogger(__name__)

NEW_FIRM_LOOKBACK = 6
ABSENCE_YEARS = 2
HORIZON = 3
POST_RULES_AFTER = 2006


@dataclass
class FirmRecord:
    firm_id: str
    birth_year: int
    industry: str
    region: str
    initial_roster: tuple[tuple[str, str], ...] = ()
    n0: int = 0
    w: float = float("nan")
    is_pioneer: bool = False
    survived_3y: bool | None = None
    growth_3y: float | None = None
    death_year: int | None = None
    lookback_truncated: bool = False
    short_lived: bool = False
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("initial_roster")
        d.pop("extra")
        d["roster"] = ";".join(f"{w}:{o}" for w, o in self.initial_roster)
        d.update(self.extra)
        return d


def _activity(panel: PanelDataset) -> pd.DataFrame:
    return panel.headcounts


def lookback_truncated(panel: PanelDataset, year: int) -> bool:
    return year - NEW_FIRM_LOOKBACK < panel.year_range[0]


def detect_new_firms(panel: PanelDataset, year: int) -> list[str]:
    """Firms reporting in ``year`` with no record in the six preceding years."""
    act = _activity(panel)
    if year not in act.columns:
        return []
    if lookback_truncated(panel, year):
        log.warning("new-firm lookback for %d truncated at panel start %d", year, panel.year_range[0])
    prior = [y for y in range(year - NEW_FIRM_LOOKBACK, year) if y in act.columns]
    now = act[year].to_numpy() > 0
    before = act[prior].to_numpy().sum(axis=1) > 0 if prior else np.zeros(len(act), bool)
    return sorted(act.index[now & ~before].astype(str))


def cell_presence(panel: PanelDataset) -> pd.Series:
    """Employment per (industry, region, year) cell, positive cells only."""
    s = panel.spells
    return s.groupby(["industry", "region", "year"], observed=True)["worker_id"].nunique()


def _birth_spells(panel: PanelDataset, firms, year: int) -> pd.DataFrame:
    s = panel.spells
    return s[(s["year"] == year) & s["firm_id"].isin(firms)]


def _birth_attributes(sel: pd.DataFrame) -> pd.DataFrame:
    ind = sel["industry"].cat.codes.to_numpy()
    reg = sel["region"].cat.codes.to_numpy()
    counts: dict[str, tuple[Counter, Counter, set, list]] = {}
    for f, i, r, w, wage in zip(sel["firm_id"].astype(str), ind, reg, sel["worker_id"], sel["wage"]):
        c = counts.setdefault(f, (Counter(), Counter(), set(), []))
        c[0][i] += 1
        c[1][r] += 1
        c[2].add(w)
        c[3].append(wage)

    # modal by spell count, ties to the first category
    def mode(counter):
        return min(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0]

    ind_labels = sel["industry"].cat.categories.astype(str)
    reg_labels = sel["region"].cat.categories.astype(str)
    rows = {f: (ind_labels[mode(ci)], reg_labels[mode(cr)], len(ws), float(np.mean(wg)))
            for f, (ci, cr, ws, wg) in counts.items()}
    return pd.DataFrame.from_dict(rows, orient="index", columns=["industry", "region", "n0", "w"])


def firm_death_year(panel: PanelDataset, firm_id: str) -> int | None:
    series = firm_activity_series(panel, firm_id)
    return _death_from_series(series)


def _death_from_series(series: dict[int, int]) -> int | None:
    years = sorted(series)
    reporting = [y for y in years if series[y] > 0]
    if not reporting:
        return None
    last = years[-1]
    for y in range(reporting[0] + 1, last):
        if series[y - 1] > 0 and series[y] == 0 and series[y + 1] == 0:
            return y
    return None


def death_years(panel: PanelDataset) -> pd.Series:
    """Vectorized :func:`firm_death_year` for every firm (NaN when censored)."""
    act = _activity(panel).to_numpy() > 0
    n, T = act.shape
    out = np.full(n, np.nan)
    if T >= 3:
        started = np.maximum.accumulate(act, axis=1)
        cand = act[:, :-2] & ~act[:, 1:-1] & ~act[:, 2:] & started[:, :-2]
        has = cand.any(axis=1)
        first = cand.argmax(axis=1) + 1
        out[has] = panel.years[first[has]]
    return pd.Series(out, index=_activity(panel).index.astype(str))


def _outcome_from(series: dict[int, int], birth: int, n0: int, death: int | None,
                  max_year: int, growth: str = "log"):
    horizon = birth + HORIZON
    if death is not None and death <= horizon:
        return False, None
    if horizon > max_year:
        return None, None
    h3 = series.get(horizon, 0)
    if h3 == 0:
        # gap at the horizon: survived only if the firm is seen again the year after
        if horizon + 1 > max_year:
            return None, None
        return True, None
    if growth == "log":
        g = float(np.log(h3) - np.log(n0))
    elif growth == "arithmetic":
        g = float((h3 - n0) / n0)
    else:
        raise ValueError(f"unknown growth definition {growth!r}")
    return True, g


def outcomes(panel: PanelDataset, firm: FirmRecord, growth: str = "log"):
    """(survived_3y, growth_3y); None marks a right-censored or undefined outcome."""
    series = firm_activity_series(panel, firm.firm_id)
    death = _death_from_series(series)
    n0 = firm.n0 or series.get(firm.birth_year, 0)
    return _outcome_from(series, firm.birth_year, n0, death, panel.year_range[1], growth)


def uses_post_rules(year: int, after: int = POST_RULES_AFTER) -> bool:
    return year > after


def classify_new_firms(panel: PanelDataset, year: int, post2006_rules: bool | None = None,
                       growth: str = "log", with_roster: bool = True) -> list[FirmRecord]:
    """FirmRecords for every new firm born in ``year``, pioneers flagged."""
    lo, hi = panel.year_range
    if year - ABSENCE_YEARS < lo:
        raise ValueError(f"industry presence for {year - ABSENCE_YEARS}..{year - 1} not in panel")
    panel.require_same_epoch(year - ABSENCE_YEARS, year)
    if post2006_rules is None:
        post2006_rules = uses_post_rules(year)
    new = detect_new_firms(panel, year)
    if not new:
        return []
    born = _birth_spells(panel, new, year)
    attrs = _birth_attributes(born)
    s = panel.spells
    prev = s.loc[s["year"].isin(range(year - ABSENCE_YEARS, year)), ["industry", "region"]].drop_duplicates()
    present = set(zip(prev["industry"].astype(str), prev["region"].astype(str)))
    act = _activity(panel)
    act_new = act.set_axis(act.index.astype(str)).reindex(new)
    act_years = [int(y) for y in act_new.columns]
    act_rows = act_new.to_numpy()
    deaths = death_years(panel).reindex(new).to_numpy()
    trunc = lookback_truncated(panel, year)
    rosters = _rosters(born) if with_roster else {}
    records = []
    attr_rows = attrs.reindex(new).to_dict("records")
    for fid, a, row, d in zip(new, attr_rows, act_rows, deaths):
        series = dict(zip(act_years, row.astype(int).tolist()))
        reports_next = series.get(year + 1, 0) > 0
        short = bool(post2006_rules and not reports_next)
        empty_cell = (a["industry"], a["region"]) not in present
        death = None if np.isnan(d) else int(d)
        n0 = int(a["n0"])
        surv, gr = _outcome_from(series, year, n0, death, hi, growth)
        records.append(FirmRecord(
            firm_id=fid,
            birth_year=int(year),
            industry=a["industry"],
            region=a["region"],
            initial_roster=rosters.get(fid, ()),
            n0=n0,
            w=float(a["w"]),
            is_pioneer=bool(empty_cell and not short),
            survived_3y=surv,
            growth_3y=gr,
            death_year=death,
            lookback_truncated=trunc,
            short_lived=short,
        ))
    return records


def detect_pioneers(panel: PanelDataset, year: int, post2006_rules: bool | None = None,
                    growth: str = "log") -> list[FirmRecord]:
    return [r for r in classify_new_firms(panel, year, post2006_rules, growth) if r.is_pioneer]


def _rosters(sel: pd.DataFrame) -> dict[str, tuple]:
    sel = sel.sort_values(["firm_id", "worker_id"])
    out: dict[str, list] = {}
    for f, w, o in zip(sel["firm_id"].astype(str), sel["worker_id"].astype(str),
                       sel["occupation"].astype(str)):
        out.setdefault(f, []).append((w, o))
    return {f: tuple(v) for f, v in out.items()}


def analysis_birth_years(panel: PanelDataset, lookback: int = ABSENCE_YEARS) -> list[int]:
    """Birth years whose history window and birth year share one classification epoch."""
    lo, hi = panel.year_range
    return [t for t in range(lo + lookback, hi + 1) if panel.same_epoch(t - lookback, t)]


def firm_table(records: list[FirmRecord]) -> pd.DataFrame:
    cols = ["firm_id", "birth_year", "industry", "region", "n0", "w", "is_pioneer",
            "survived_3y", "growth_3y", "death_year", "lookback_truncated", "short_lived", "roster"]
    if not records:
        return pd.DataFrame(columns=cols)
    df = pd.DataFrame([r.row() for r in records])
    return df[cols + [c for c in df.columns if c not in cols]]
