"""In-process analysis: classification, knowledge stocks, estimation tables, figure data.

:func:`run_analysis` goes from a :class:`PanelDataset` to every estimate and
figure table; the CLI wraps the same functions stage by stage.
"""
from __future__ import annotations

import configparser
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .bartik import bartik_table, region_industry_employment
from .econometrics import (DesignMatrix, EstimationResult, average_marginal_effects,
                           coefficient_frame, cox_fit, fit_frame, layout, logistic_fit, ols_fit,
                           render_text, two_stage_least_squares)
from .errors import ConfigError, KnowflowError
from .ingest import PanelDataset
from .knowledge import CONTROL_FIELDS, KNOWLEDGE_FIELDS, knowledge_profiles
from .pioneers import FirmRecord, analysis_birth_years, classify_new_firms, firm_table
from .relatedness import RelatednessMatrix, relatedness_for_year, trim_network

log = logging.getLogger(__name__)

FIXED_EFFECTS = ("industry", "birth_year", "region")
IV_FIXED_EFFECTS = FIXED_EFFECTS + ("region_year",)
CLUSTER = "region"
REGION_CONTROLS = ("region_log_employment", "region_log_wage", "region_schooling",
                   "available_knowledge", "region_nonpioneer_survival")
TERM_LABELS = {
    "Phi_z": "Industry knowledge",
    "Psi_z": "Occupation knowledge",
    "edu_z": "Years of schooling",
    "rho_z": "Local knowledge",
    "pioneer": "Pioneer",
    "Phi_z_x_pioneer": "Industry knowledge x pioneer",
    "log_n0": "Initial size (log)",
    "log_w": "Average wage (log)",
    "B": "Related-industry shock",
    "g_own": "Growth of industry",
    "g_local": "Growth of local industries",
    **{c: c.replace("_", " ").capitalize() for c in REGION_CONTROLS},
}


@dataclass(frozen=True)
class AnalysisConfig:
    lookback: int = 2
    growth: str = "log"
    local_employment_year: str = "t"
    network_threshold: float | None = None
    fig3_bins: int = 10
    min_cell_firms: int = 5
    cox_cohort: int | None = None
    drop_collinear: bool = True
    iv_fixed_effects: tuple[str, ...] = ("birth_year",)
    birth_from: int | None = None
    birth_to: int | None = None
    threads: int = 1

    def validate(self) -> None:
        if self.growth not in ("log", "arithmetic"):
            raise ConfigError("growth must be 'log' or 'arithmetic'")
        if self.local_employment_year not in ("t", "t-1"):
            raise ConfigError("local_employment_year must be 't' or 't-1'")
        if self.fig3_bins < 1 or self.min_cell_firms < 0 or self.lookback < 1:
            raise ConfigError("fig3_bins and lookback must be positive, min_cell_firms non-negative")
        if self.network_threshold is not None and not 0 <= self.network_threshold <= 1:
            raise ConfigError("network_threshold must lie in [0, 1]")
        bad = set(self.iv_fixed_effects) - set(IV_FIXED_EFFECTS)
        if bad:
            raise ConfigError(f"unknown IV fixed effects {sorted(bad)}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "AnalysisConfig":
        kinds = {f.name: f for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown analysis key {key!r}")
            raw = str(raw).strip()
            default = kinds[key].default
            try:
                if key in ("network_threshold",):
                    out[key] = None if raw in ("", "none") else float(raw)
                elif key in ("cox_cohort", "birth_from", "birth_to"):
                    out[key] = None if raw in ("", "none") else int(raw)
                elif key == "iv_fixed_effects":
                    out[key] = tuple(p.strip() for p in raw.split(",") if p.strip())
                elif isinstance(default, bool):
                    out[key] = configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]
                elif isinstance(default, int):
                    out[key] = int(raw)
                else:
                    out[key] = raw
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
        cfg = cls(**out)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["iv_fixed_effects"] = list(self.iv_fixed_effects)
        return d


# ---------------------------------------------------------------------------
# measurement


def birth_years(panel: PanelDataset, cfg: AnalysisConfig) -> list[int]:
    lo, hi = cfg.birth_from, cfg.birth_to
    return [t for t in analysis_birth_years(panel, cfg.lookback)
            if (lo is None or t >= lo) and (hi is None or t <= hi)]


def classify(panel: PanelDataset, cfg: AnalysisConfig, years: Sequence[int] | None = None) -> list[FirmRecord]:
    """New firms (pioneers flagged) for every analysis birth year."""
    years = birth_years(panel, cfg) if years is None else years
    out: list[FirmRecord] = []
    for t in years:
        out.extend(classify_new_firms(panel, t, growth=cfg.growth))
    return out


def records_from_table(frame: pd.DataFrame) -> list[FirmRecord]:
    """FirmRecords (without rosters) back from a firm table."""
    def opt(v, cast):
        return None if pd.isna(v) else cast(v)

    recs = []
    for row in frame.itertuples(index=False):
        recs.append(FirmRecord(
            firm_id=str(row.firm_id), birth_year=int(row.birth_year), industry=str(row.industry),
            region=str(row.region), n0=int(row.n0), w=float(row.w), is_pioneer=_bool(row.is_pioneer),
            survived_3y=opt(row.survived_3y, _bool), growth_3y=opt(row.growth_3y, float),
            death_year=opt(row.death_year, int), lookback_truncated=_bool(row.lookback_truncated),
            short_lived=_bool(row.short_lived),
        ))
    return recs


def _bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("true", "1")
    return bool(v)


def relatedness_years(panel: PanelDataset, years: Iterable[int], threads: int = 1
                      ) -> tuple[dict[int, RelatednessMatrix], dict[int, RelatednessMatrix]]:
    """Industry and occupation relatedness from the flows into each year."""
    years = sorted(set(int(t) for t in years))
    jobs = [(k, t) for t in years for k in ("industry", "occupation")]
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as ex:
        mats = list(ex.map(lambda job: relatedness_for_year(panel, job[0], job[1]), jobs))
    phi = {t: m for (k, t), m in zip(jobs, mats) if k == "industry"}
    psi = {t: m for (k, t), m in zip(jobs, mats) if k == "occupation"}
    return phi, psi


def flow_years(panel: PanelDataset) -> list[int]:
    """Years whose flows from the previous year stay within one classification epoch."""
    lo, hi = panel.year_range
    return [t for t in range(lo + 1, hi + 1) if panel.same_epoch(t - 1, t)]


def networks(mats: Mapping[int, RelatednessMatrix], threshold: float | None = None) -> pd.DataFrame:
    """Trimmed network edge lists stacked over years."""
    frames = []
    for t, m in sorted(mats.items()):
        net = trim_network(m, threshold)
        e = net.edge_frame()
        e.insert(0, "year", t)
        e.insert(0, "kind", m.entity_kind)
        e["threshold"] = net.threshold
        frames.append(e)
    cols = ["kind", "year", "source", "target", "weight", "threshold"]
    return pd.concat(frames, ignore_index=True)[cols] if frames else pd.DataFrame(columns=cols)


def region_context(panel: PanelDataset, firms: pd.DataFrame,
                   phi_by_year: Mapping[int, RelatednessMatrix]) -> pd.DataFrame:
    """Pre-birth (t-1) region conditions for each firm, indexed by firm_id.

    Available knowledge is the local employment share weighted by relatedness
    to the firm's industry, own industry excluded. Non-pioneer survival is the
    three-year survival rate of surviving-classified non-pioneers in the
    region, pooled over cohorts.
    """
    s = panel.spells
    regions = panel.labels("region")
    industries = panel.labels("industry")
    rpos = {r: k for k, r in enumerate(regions)}
    ipos = {i: k for k, i in enumerate(industries)}
    np_mask = ~firms["is_pioneer"].astype(bool) & ~firms["short_lived"].astype(bool)
    np_surv = firms.loc[np_mask].dropna(subset=["survived_3y"])
    rate = np_surv.groupby("region")["survived_3y"].mean()
    overall = float(np_surv["survived_3y"].mean()) if len(np_surv) else float("nan")
    rows = []
    for t, cohort in firms.groupby("birth_year", sort=True):
        prev = s[s["year"] == t - 1]
        g = prev.groupby("region", observed=True)
        emp = g["worker_id"].nunique()
        wage = g["wage"].mean()
        school = g["schooling_years"].mean()
        L = region_industry_employment(panel, t - 1)
        phi = phi_by_year[t].reindex(industries).values if t in phi_by_year else None
        for f in cohort.itertuples(index=False):
            r, i = rpos[f.region], ipos[f.industry]
            avail = float("nan")
            if phi is not None:
                w = L[r].copy()
                w[i] = 0.0
                if w.sum() > 0:
                    avail = float(phi[i] @ w / w.sum())
            rows.append({
                "firm_id": f.firm_id,
                "region_log_employment": float(np.log(emp.get(f.region, np.nan))),
                "region_log_wage": float(np.log(wage.get(f.region, np.nan))),
                "region_schooling": float(school.get(f.region, np.nan)),
                "available_knowledge": avail,
                "region_nonpioneer_survival": float(rate.get(f.region, overall)),
            })
    cols = ["firm_id", *REGION_CONTROLS]
    return pd.DataFrame(rows, columns=cols).set_index("firm_id")


def covariate_table(panel: PanelDataset, records: Sequence[FirmRecord],
                    phi_by_year: Mapping[int, RelatednessMatrix],
                    psi_by_year: Mapping[int, RelatednessMatrix],
                    cfg: AnalysisConfig = AnalysisConfig()) -> pd.DataFrame:
    """One row per new firm: outcomes, raw knowledge stocks, firm and region controls."""
    firms = firm_table(list(records)).drop(columns=["roster"])
    if not len(firms):
        raise KnowflowError("no new firms in the analysis window")
    prof = knowledge_profiles(panel, records, phi_by_year, psi_by_year, lookback=cfg.lookback)
    out = firms.set_index("firm_id").join(prof.drop(columns=["birth_year"]))
    out = out.join(region_context(panel, firms, phi_by_year))
    out["survived"] = out["survived_3y"].map({True: 1.0, False: 0.0}).astype(float)
    out["growth"] = pd.to_numeric(out["growth_3y"], errors="coerce").astype(float)
    out["pioneer"] = out["is_pioneer"].astype(bool).astype(float)
    out["death_year"] = pd.to_numeric(out["death_year"], errors="coerce").astype("Int64")
    out["region_year"] = out["region"].astype(str) + ":" + out["birth_year"].astype(str)
    out = out.reset_index()
    cols = ["firm_id", "birth_year", "industry", "region", "is_pioneer", "short_lived", "pioneer",
            "region_year", "n0", "w", "survived", "growth", "death_year", *KNOWLEDGE_FIELDS, *CONTROL_FIELDS,
            *REGION_CONTROLS]
    return out[cols].sort_values(["birth_year", "firm_id"], kind="stable").reset_index(drop=True)


# ---------------------------------------------------------------------------
# model registry


@dataclass(frozen=True)
class ModelSpec:
    name: str
    table: str
    family: str  # logit | ols | cox | iv_first | iv_reduced | iv | iv_ols
    outcome: str
    knowledge: tuple[str, ...]
    sample: str  # pioneers | nonpioneers | new | cox_cohort
    interaction: bool = False
    controls: tuple[str, ...] = CONTROL_FIELDS

    @property
    def column(self) -> str:
        return self.name.split("-", 1)[1]


def _table1() -> list[ModelSpec]:
    sets = [(), ("Phi",), ("Psi",), ("edu",), ("rho",), KNOWLEDGE_FIELDS]
    out = []
    for k, ks in enumerate(sets, start=1):
        out.append(ModelSpec(f"table1-model{k}", "table1", "logit", "survived", ks, "pioneers"))
    for k, ks in enumerate(sets, start=7):
        out.append(ModelSpec(f"table1-model{k}", "table1", "ols", "growth", ks, "pioneers"))
    return out


def _table2() -> list[ModelSpec]:
    out = []
    for base, family, outcome in ((1, "logit", "survived"), (4, "ols", "growth")):
        for k, (sample, inter) in enumerate((("pioneers", False), ("nonpioneers", False), ("new", True))):
            out.append(ModelSpec(f"table2-model{base + k}", "table2", family, outcome,
                                 KNOWLEDGE_FIELDS, sample, inter))
    return out


def _table3() -> list[ModelSpec]:
    sets = [("Phi",), ("Psi",), ("edu",), ("rho",), KNOWLEDGE_FIELDS]
    return [ModelSpec(f"table3-model{k}", "table3", "cox", "duration", ks, "cox_cohort",
                      controls=CONTROL_FIELDS + REGION_CONTROLS)
            for k, ks in enumerate(sets, start=1)]


def _table4() -> list[ModelSpec]:
    fams = ("iv_first", "iv_reduced", "iv", "iv_ols")
    outcomes = ("Phi_z", "growth", "growth", "growth")
    return [ModelSpec(f"table4-model{k}", "table4", fam, out, KNOWLEDGE_FIELDS, "pioneers")
            for k, (fam, out) in enumerate(zip(fams, outcomes), start=1)]


MODELS: dict[str, ModelSpec] = {m.name: m for m in _table1() + _table2() + _table3() + _table4()}
TABLES = ("table1", "table2", "table3", "table4")


def table_models(table: str) -> list[str]:
    return [n for n, m in MODELS.items() if m.table == table]


# ---------------------------------------------------------------------------
# samples and standardization


def sample_frame(cov: pd.DataFrame, spec: ModelSpec, cox_cohort: int | None = None) -> pd.DataFrame:
    """Rows of the estimation sample for ``spec`` with complete outcome and covariates."""
    pion = cov["is_pioneer"].astype(bool)
    live = ~cov["short_lived"].astype(bool)
    if spec.sample == "pioneers":
        m = pion
    elif spec.sample == "nonpioneers":
        m = ~pion & live
    elif spec.sample == "new":
        m = live
    elif spec.sample == "cox_cohort":
        m = pion & (cov["birth_year"] == cox_cohort)
    else:
        raise ValueError(f"unknown sample {spec.sample!r}")
    need = [*KNOWLEDGE_FIELDS, *spec.controls]
    if spec.outcome in ("survived", "growth"):
        need.append(spec.outcome)
    if spec.family.startswith("iv"):
        need.append("growth")
    return cov.loc[m].dropna(subset=need).copy()


def standardize_sample(frame: pd.DataFrame, fields_: Sequence[str] = KNOWLEDGE_FIELDS
                       ) -> tuple[pd.DataFrame, dict[str, dict[str, float]]]:
    """Add ``<field>_z`` columns standardized within ``frame`` (n-1 sd); also return the stats."""
    out = frame.copy()
    stats: dict[str, dict[str, float]] = {}
    for f in fields_:
        x = out[f].to_numpy(dtype=float)
        mean = float(x.mean()) if len(x) else float("nan")
        sd = float(x.std(ddof=1)) if len(x) > 1 else float("nan")
        stats[f] = {"mean": mean, "sd": sd}
        out[f + "_z"] = (x - mean) / sd if sd > 0 else 0.0
    return out, stats


def default_cox_cohort(cov: pd.DataFrame) -> int:
    years = sorted(cov.loc[cov["is_pioneer"].astype(bool), "birth_year"].unique())
    if not years:
        raise KnowflowError("no pioneer cohort available for the duration model")
    return int(years[0])


def durations(frame: pd.DataFrame, last_year: int) -> tuple[np.ndarray, np.ndarray]:
    """Years from birth to death, or to the last year a death could still be detected."""
    birth = frame["birth_year"].to_numpy(dtype=float)
    death = frame["death_year"].astype("Float64").to_numpy(dtype=float, na_value=np.nan)
    event = np.isfinite(death)
    # a death needs the year of exit and the next one observed
    censor = (last_year - 1) - birth + 1
    return np.where(event, death - birth, censor), event


# ---------------------------------------------------------------------------
# estimation


def _design(frame: pd.DataFrame, outcome: str, covariates: Sequence[str],
            fixed_effects: Sequence[str] = FIXED_EFFECTS) -> DesignMatrix:
    return DesignMatrix.from_frame(frame, outcome, list(covariates), fixed_effects=list(fixed_effects),
                                   cluster=CLUSTER)


def fit_model(spec: ModelSpec, cov: pd.DataFrame, cfg: AnalysisConfig = AnalysisConfig(),
              bartik: pd.DataFrame | None = None, last_year: int | None = None) -> EstimationResult:
    """Fit one registered model; ``extra['standardization']`` holds the sample mean/sd used."""
    cohort = None
    if spec.family == "cox":
        cohort = cfg.cox_cohort if cfg.cox_cohort is not None else default_cox_cohort(cov)
    frame = sample_frame(cov, spec, cohort)
    if spec.family.startswith("iv"):
        frame = _with_shock(frame, bartik)
    frame, stats = standardize_sample(frame)
    zs = [k + "_z" for k in spec.knowledge]
    if spec.family == "logit" or spec.family == "ols":
        cols = list(zs)
        if spec.interaction:
            frame["Phi_z_x_pioneer"] = frame["Phi_z"] * frame["pioneer"]
            cols += ["pioneer", "Phi_z_x_pioneer"]
        d = _design(frame, spec.outcome, cols + list(spec.controls))
        fitter = logistic_fit if spec.family == "logit" else ols_fit
        fit = fitter(d, drop_collinear=cfg.drop_collinear)
    elif spec.family == "cox":
        if last_year is None:
            raise ValueError("last_year required for duration models")
        t, ev = durations(frame, last_year)
        fit = cox_fit(t, ev, frame[zs], frame[list(spec.controls)])
        fit.extra["cohort"] = cohort
    else:
        fit = _fit_iv(spec, frame, cfg)
    fit.extra["standardization"] = stats
    fit.extra["spec"] = spec.name
    return fit


def _with_shock(frame: pd.DataFrame, bartik: pd.DataFrame | None) -> pd.DataFrame:
    if bartik is None:
        raise ValueError("shock table required for instrumental-variable models")
    b = bartik[["region", "industry", "year", "B", "g_own", "g_local"]].rename(columns={"year": "birth_year"})
    out = frame.merge(b, on=["region", "industry", "birth_year"], how="left")
    undefined = out[["B", "g_own", "g_local"]].isna().any(axis=1)
    if undefined.any():
        log.info("%d firms without a defined shock or own-industry growth dropped from the IV sample",
                 int(undefined.sum()))
    return out.loc[~undefined].reset_index(drop=True)


def iv_exogenous() -> list[str]:
    return ["g_own", "g_local", "Psi_z", "edu_z", "rho_z", *CONTROL_FIELDS]


def _fit_iv(spec: ModelSpec, frame: pd.DataFrame, cfg: AnalysisConfig) -> EstimationResult:
    exog = iv_exogenous()
    fe = cfg.iv_fixed_effects
    dc = cfg.drop_collinear
    if spec.family == "iv_first":
        return ols_fit(_design(frame, "Phi_z", ["B", *exog], fe), drop_collinear=dc)
    if spec.family == "iv_reduced":
        return ols_fit(_design(frame, "growth", ["B", *exog], fe), drop_collinear=dc)
    if spec.family == "iv_ols":
        return ols_fit(_design(frame, "growth", ["Phi_z", *exog], fe), drop_collinear=dc)
    d = _design(frame, "growth", ["Phi_z", *exog, "B"], fe)
    return two_stage_least_squares(d, "Phi_z", "B", drop_collinear=dc)


def fit_models(names: Sequence[str], cov: pd.DataFrame, cfg: AnalysisConfig = AnalysisConfig(),
               bartik: pd.DataFrame | None = None, last_year: int | None = None
               ) -> dict[str, EstimationResult]:
    """Fit several registered models; a failure names the model and keeps the error code."""
    def one(name):
        try:
            return fit_model(MODELS[name], cov, cfg, bartik, last_year)
        except KnowflowError as exc:
            exc.args = (f"{name}: {exc}",)
            raise

    unknown = [n for n in names if n not in MODELS]
    if unknown:
        raise KeyError(f"unknown model(s) {unknown}")
    with ThreadPoolExecutor(max_workers=max(cfg.threads, 1)) as ex:
        fits = list(ex.map(one, names))
    return dict(zip(names, fits))


# ---------------------------------------------------------------------------
# figure data


def quantile_bins(x: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin index in 0..bins-1 from sample quantile edges; repeated edges leave bins empty."""
    edges = np.quantile(x, np.linspace(0, 1, bins + 1))
    idx = np.searchsorted(edges[1:-1], x, side="right")
    return idx, edges


def fig3_grids(cov: pd.DataFrame, bins: int = 10, min_cell: int = 5) -> pd.DataFrame:
    """Counts, survival rate and mean growth of pioneers over (Phi, Psi) quantile bins.

    ``survival_masked``/``growth_masked`` mark cells with fewer than
    ``min_cell`` firms behind the statistic.
    """
    p = cov.loc[cov["is_pioneer"].astype(bool)].dropna(subset=["Phi", "Psi", "survived"])
    if not len(p):
        raise KnowflowError("no pioneers with measured knowledge for the histogram grids")
    bi, ei = quantile_bins(p["Phi"].to_numpy(float), bins)
    bj, ej = quantile_bins(p["Psi"].to_numpy(float), bins)
    surv = p["survived"].to_numpy(float)
    grow = p["growth"].to_numpy(float)
    rows = []
    for a in range(bins):
        for b in range(bins):
            m = (bi == a) & (bj == b)
            g = grow[m & np.isfinite(grow)]
            n = int(m.sum())
            rows.append({
                "phi_bin": a, "psi_bin": b,
                "phi_lo": ei[a], "phi_hi": ei[a + 1], "psi_lo": ej[b], "psi_hi": ej[b + 1],
                "n_firms": n,
                "survival_rate": float(surv[m].mean()) if n else float("nan"),
                "n_growth": int(len(g)),
                "mean_growth": float(g.mean()) if len(g) else float("nan"),
                "survival_masked": n < min_cell,
                "growth_masked": len(g) < min_cell,
            })
    return pd.DataFrame(rows)


def phi_profile(cov: pd.DataFrame, bins: int = 10, min_cell: int = 5) -> pd.DataFrame:
    """Survival rate and mean growth of pioneers by industry-knowledge quantile bin."""
    p = cov.loc[cov["is_pioneer"].astype(bool)].dropna(subset=["Phi", "survived"])
    idx, edges = quantile_bins(p["Phi"].to_numpy(float), bins)
    rows = []
    for a in range(bins):
        m = idx == a
        g = p["growth"].to_numpy(float)[m]
        g = g[np.isfinite(g)]
        n = int(m.sum())
        rows.append({"phi_bin": a, "phi_lo": edges[a], "phi_hi": edges[a + 1], "n_firms": n,
                     "survival_rate": float(p["survived"].to_numpy(float)[m].mean()) if n else float("nan"),
                     "mean_growth": float(g.mean()) if len(g) else float("nan"),
                     "masked": n < min_cell})
    return pd.DataFrame(rows)


def ame_table(fit: EstimationResult) -> pd.DataFrame:
    """Average marginal effects of the knowledge stocks on survival."""
    names = [k + "_z" for k in KNOWLEDGE_FIELDS if k + "_z" in fit.names]
    return average_marginal_effects(fit, covariates=names)


# ---------------------------------------------------------------------------
# driver


@dataclass
class Analysis:
    config: AnalysisConfig
    firms: pd.DataFrame
    covariates: pd.DataFrame
    phi: dict[int, RelatednessMatrix]
    psi: dict[int, RelatednessMatrix]
    bartik: pd.DataFrame | None = None
    fits: dict[str, EstimationResult] = field(default_factory=dict)
    networks: pd.DataFrame | None = None
    fig3: pd.DataFrame | None = None
    phi_profile: pd.DataFrame | None = None
    ame: pd.DataFrame | None = None

    def standardization(self, model: str) -> dict[str, dict[str, float]]:
        return self.fits[model].extra["standardization"]


def shock_cells(cov: pd.DataFrame) -> list[tuple[str, str, int]]:
    p = cov.loc[cov["is_pioneer"].astype(bool), ["region", "industry", "birth_year"]].drop_duplicates()
    return [(str(r), str(i), int(t)) for r, i, t in p.itertuples(index=False)]


def run_analysis(panel: PanelDataset, cfg: AnalysisConfig = AnalysisConfig(),
                 models: Sequence[str] | None = None, figures: bool = True,
                 all_relatedness: bool = True,
                 progress: Callable[[str], None] | None = None) -> Analysis:
    """Every estimate and figure table for ``panel``.

    ``models`` restricts estimation to a subset of :data:`MODELS`; the shock
    table is built only when an instrumental-variable model is requested.
    """
    cfg.validate()
    say = progress or (lambda stage: log.info("stage %s", stage))
    say("pioneers")
    years = birth_years(panel, cfg)
    records = classify(panel, cfg, years)
    say("relatedness")
    rel_years = flow_years(panel) if all_relatedness else years
    phi, psi = relatedness_years(panel, set(rel_years) | set(years), cfg.threads)
    say("knowledge")
    cov = covariate_table(panel, records, phi, psi, cfg)
    names = list(MODELS) if models is None else list(models)
    bartik = None
    if any(MODELS[n].family.startswith("iv") for n in names):
        say("bartik")
        bartik = bartik_table(panel, phi, shock_cells(cov), cfg.local_employment_year)
    say("estimate")
    fits = fit_models(names, cov, cfg, bartik, panel.year_range[1])
    out = Analysis(cfg, firm_table(records), cov, phi, psi, bartik, fits)
    if figures:
        say("report")
        out.networks = pd.concat([networks(phi, cfg.network_threshold),
                                  networks(psi, cfg.network_threshold)], ignore_index=True)
        out.fig3 = fig3_grids(cov, cfg.fig3_bins, cfg.min_cell_firms)
        out.phi_profile = phi_profile(cov, cfg.fig3_bins, cfg.min_cell_firms)
        if "table1-model6" in fits:
            out.ame = ame_table(fits["table1-model6"])
    return out


# ---------------------------------------------------------------------------
# table layouts

KNOWLEDGE_TERMS = tuple(k + "_z" for k in KNOWLEDGE_FIELDS)
TABLE_TERMS = {
    "table1": (*KNOWLEDGE_TERMS, *CONTROL_FIELDS),
    "table2": (*KNOWLEDGE_TERMS, "pioneer", "Phi_z_x_pioneer", *CONTROL_FIELDS),
    "table3": (*KNOWLEDGE_TERMS, *CONTROL_FIELDS, *REGION_CONTROLS),
    "table4": ("B", "Phi_z", "g_own", "g_local", "Psi_z", "edu_z", "rho_z", *CONTROL_FIELDS),
}
TABLE_STATS = {
    "table1": ("Observations", "Clusters", "Log likelihood", "McFadden R2", "AICc", "R2",
               "Adjusted R2", "F Statistic"),
    "table2": ("Observations", "Clusters", "Log likelihood", "McFadden R2", "AICc", "R2",
               "Adjusted R2", "F Statistic"),
    "table3": ("Observations", "Events", "Log likelihood", "R2", "Wald Test"),
    "table4": ("Observations", "Clusters", "R2", "Adjusted R2", "First-stage F"),
}
TABLE4_COLUMNS = {"table4-model1": "First stage", "table4-model2": "Reduced form",
                  "table4-model3": "2SLS", "table4-model4": "OLS"}


def table_of(model: str) -> str:
    return MODELS[model].table


def table_frames(fits: Mapping[str, EstimationResult], table: str) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Reported coefficients (fixed effects and intercept omitted) and fit statistics."""
    cols = {m: f for m, f in fits.items() if table_of(m) == table}
    return coefficient_frame(cols, TABLE_TERMS[table]), fit_frame(cols, TABLE_STATS[table])


def results_record(fit: EstimationResult) -> dict:
    """Machine-readable record of one fit: every parameter plus fit statistics."""
    def clean(v):
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, (float, np.floating)):
            return float(v) if np.isfinite(v) else None
        if isinstance(v, (str, int, bool)) or v is None:
            return v
        return None

    extra = {k: v for k, v in fit.extra.items()
             if k not in ("X", "first_stage", "reduced_form") and not isinstance(v, np.ndarray)}
    return clean({
        **fit.stats_dict(),
        "names": list(fit.names),
        "params": fit.params.tolist(),
        "se": fit.se.tolist(),
        "pvalues": fit.pvalues.tolist(),
        "extra": extra,
    })


def render_table(table: str, coefs: pd.DataFrame, fits: pd.DataFrame,
                 models: Sequence[str] | None = None, digits: int = 3) -> str:
    if models is None:
        models = [m for m in MODELS if m in set(coefs["model"]) | set(fits["model"])]
    grid = layout(coefs, fits, models, TABLE_TERMS[table], TERM_LABELS, TABLE_STATS[table], digits)
    names = {m: TABLE4_COLUMNS.get(m, f"({MODELS[m].column.removeprefix('model')})") for m in models}
    grid = grid.rename(columns=names)
    return render_text(grid)


def render_grid(grid: pd.DataFrame, value: str, masked: str | None, digits: int = 2) -> str:
    """One histogram panel: rows are Phi bins (high first), columns Psi bins; '.' marks masked cells."""
    bins = int(grid["phi_bin"].max()) + 1
    lines = [f"{value} over industry knowledge (rows, high to low) x occupation knowledge (columns)"]
    lines.append("      " + " ".join(f"{b:>7d}" for b in range(bins)))
    for a in range(bins - 1, -1, -1):
        row = grid[grid["phi_bin"] == a].sort_values("psi_bin")
        cells = []
        for r in row.itertuples(index=False):
            v = getattr(r, value)
            if masked is not None and getattr(r, masked):
                cells.append(f"{'.':>7s}")
            elif isinstance(v, (int, np.integer)):
                cells.append(f"{int(v):>7d}")
            else:
                cells.append(f"{v:>7.{digits}f}")
        lines.append(f"{a:>5d} " + " ".join(cells))
    return "\n".join(lines) + "\n"
