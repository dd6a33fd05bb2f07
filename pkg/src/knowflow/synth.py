"""Synthetic employer-employee panels with planted ground truth.

Incumbent firms occupy a fixed set of (region, industry) cells and keep one
immobile anchor worker each, so their cells stay occupied. Each year workers
exit, move between firms, and are replaced by labor-market entrants. Moves
follow a planted industry relatedness and yearly national demand shocks:
workers leave shrinking industries and favor growing, related ones.

New firms are born in a few cohort years. Pioneers open in cells that were
empty in the two prior years; the rest open in occupied cells. Each new firm
hires its initial roster from incumbents, preferring industries related to its
own, avoiding industries with a positive demand shock, and tilting toward
related hires in proportion to an unobserved quality when the confounder is
switched on. At the end of each cohort year the cohort's knowledge stocks are
measured with the library's own relatedness and knowledge code on the panel
so far, and three-year survival and growth are drawn from planted models on
those measured values.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .errors import ConfigError, InfeasibleConfigError, KnowflowError
from .ingest import PanelDataset, write_spells
from .knowledge import CONTROL_FIELDS, KNOWLEDGE_FIELDS, knowledge_profiles
from .pioneers import FirmRecord
from .relatedness import relatedness_for_year

log = logging.getLogger(__name__)

MIN_INDUSTRIES = 3
MIN_REGIONS = 2
MIN_YEARS = 4


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_workers: int = 50_000
    n_firms: int = 5_000
    n_industries: int = 30
    n_occupations: int = 40
    n_regions: int = 10
    first_year: int = 2008
    n_years: int = 10
    # firm births
    new_firm_share: float = 0.4
    pioneer_share: float = 0.5
    short_lived_share: float = 0.03
    n_cohorts: int = 4
    cell_presence: float = 0.5
    max_pioneers_per_cell: int = 12
    mean_initial_size: float = 6.0
    # planted relatedness: propensity exp(sharpness * relatedness)
    industry_sharpness: float = 4.0
    occupation_sharpness: float = 4.0
    relatedness_noise: float = 0.05
    # mobility
    mobility_intensity: float = 0.12
    exit_rate: float = 0.04
    cross_region_share: float = 0.2
    occupation_switch_movers: float = 0.3
    shock_sd: float = 0.5
    shock_harmonics: int = 3
    shock_response: float = 1.0
    # new-firm hiring
    fresh_hire_share: float = 0.1
    local_hire_mean: float = 0.6
    occupation_keep_mean: float = 0.6
    hiring_relatedness: float = 4.0
    hiring_relatedness_sd: float = 2.0
    supply_response: float = 6.0  # related-hiring taste lost per shock sd in related local industries
    unavailable_share: float = 0.0  # drawn incumbent worker unavailable at zero shock
    availability_response: float = 0.0  # logit shift of unavailability per unit source shock
    # planted outcome models, standardized effects of (Phi, Psi, edu, rho)
    survival_betas: tuple[float, ...] = (0.5, 0.0, 0.0, 0.3)
    growth_betas: tuple[float, ...] = (0.15, 0.0, 0.0, 0.08)
    survival_controls: tuple[float, ...] = (0.2, 0.0)  # raw log_n0, log_w
    growth_controls: tuple[float, ...] = (-0.05, 0.0)
    survival_rate: float = 0.65
    growth_mean: float = 0.1
    growth_noise: float = 0.3
    nonpioneer_scale: float = 0.5
    late_hazard: float = 0.08
    # endogeneity: unobserved quality raises related hiring and growth
    confounder_strength: float = 0.0
    confounder_hiring: float = 1.5
    confounder_growth: float = 0.3

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.first_year + self.n_years))

    @property
    def cohort_years(self) -> list[int]:
        lo = self.first_year + 2
        hi = min(lo + self.n_cohorts, self.first_year + self.n_years - 1)
        return list(range(lo, hi))

    def validate(self) -> None:
        if self.n_industries < MIN_INDUSTRIES or self.n_regions < MIN_REGIONS or self.n_years < MIN_YEARS:
            raise InfeasibleConfigError(
                f"need >= {MIN_INDUSTRIES} industries, >= {MIN_REGIONS} regions, >= {MIN_YEARS} years")
        if self.n_occupations < 2:
            raise InfeasibleConfigError("need >= 2 occupations")
        for name in ("new_firm_share", "pioneer_share", "short_lived_share", "cell_presence",
                     "fresh_hire_share", "local_hire_mean", "occupation_keep_mean",
                     "exit_rate", "cross_region_share", "survival_rate", "unavailable_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InfeasibleConfigError(f"{name} = {v} outside [0, 1]")
        if not 0 < self.survival_rate < 1:
            raise InfeasibleConfigError("survival_rate must lie strictly between 0 and 1")
        if not 0 <= self.mobility_intensity <= 1:
            raise InfeasibleConfigError("mobility_intensity must lie in [0, 1]")
        if len(self.survival_betas) != 4 or len(self.growth_betas) != 4:
            raise InfeasibleConfigError("planted betas need four entries (Phi, Psi, edu, rho)")
        n_inc = self.n_firms - self.n_new_firms
        if n_inc < 1:
            raise InfeasibleConfigError("no incumbent firms left after new-firm allocation")
        if self.n_workers < 2 * n_inc:
            raise InfeasibleConfigError("fewer than two workers per incumbent firm")
        if not self.cohort_years:
            raise InfeasibleConfigError("panel too short for any cohort year")

    @property
    def n_new_firms(self) -> int:
        return int(round(self.new_firm_share * self.n_firms))

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "SynthConfig":
        """Build from string values (an INI section); unknown keys are an error."""
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown synth option {key!r}")
            default = fields[key].default
            try:
                if isinstance(default, tuple):
                    kwargs[key] = tuple(float(x) for x in str(raw).split(",") if x.strip())
                elif isinstance(default, bool):
                    kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    kwargs[key] = int(raw)
                else:
                    kwargs[key] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}


@dataclass
class GroundTruth:
    config: SynthConfig
    industries: list[str]
    occupations: list[str]
    regions: list[str]
    phi_true: np.ndarray
    psi_true: np.ndarray
    firms: pd.DataFrame  # one row per new firm
    # raw-scale slopes used for planting (per unit of the measured field)
    survival_slopes: dict[str, float] = field(default_factory=dict)
    growth_slopes: dict[str, float] = field(default_factory=dict)
    planting_sd: dict[str, float] = field(default_factory=dict)
    intercepts: dict[str, float] = field(default_factory=dict)
    shocks: np.ndarray | None = None  # [year, industry]
    notes: list[str] = field(default_factory=list)

    @property
    def pioneers(self) -> set[str]:
        return set(self.firms.loc[self.firms["is_pioneer"], "firm_id"])

    @property
    def new_firms(self) -> set[str]:
        return set(self.firms["firm_id"])

    def death_years(self) -> dict[str, int | None]:
        d = self.firms.set_index("firm_id")["death_year"]
        return {f: (None if pd.isna(v) else int(v)) for f, v in d.items()}

    def standardized_truth(self, sd: Mapping[str, float], outcome: str = "survival") -> dict[str, float]:
        """Planted effect of a one-sd change, for the sds of a given estimation sample."""
        slopes = self.survival_slopes if outcome == "survival" else self.growth_slopes
        return {k: slopes[k] * float(sd[k]) for k in KNOWLEDGE_FIELDS}

    def relatedness_order(self, kind: str = "industry") -> list[tuple[str, str]]:
        """Entity pairs sorted by planted relatedness, strongest first."""
        m = self.phi_true if kind == "industry" else self.psi_true
        ent = self.industries if kind == "industry" else self.occupations
        iu, ju = np.triu_indices(len(ent), 1)
        order = np.lexsort((ju, iu, -m[iu, ju]))
        return [(ent[iu[k]], ent[ju[k]]) for k in order]

    def to_json(self) -> dict:
        firms = self.firms.copy()
        firms = firms.astype(object).where(firms.notna(), None)
        return {
            "config": self.config.to_dict(),
            "industries": self.industries,
            "occupations": self.occupations,
            "regions": self.regions,
            "phi_true": self.phi_true.tolist(),
            "psi_true": self.psi_true.tolist(),
            "survival_slopes": self.survival_slopes,
            "growth_slopes": self.growth_slopes,
            "planting_sd": self.planting_sd,
            "intercepts": self.intercepts,
            "shocks": None if self.shocks is None else self.shocks.tolist(),
            "notes": self.notes,
            "firms": firms.to_dict(orient="list"),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "GroundTruth":
        cfg = data["config"]
        cfg = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
        return cls(
            config=cfg,
            industries=list(data["industries"]),
            occupations=list(data["occupations"]),
            regions=list(data["regions"]),
            phi_true=np.asarray(data["phi_true"]),
            psi_true=np.asarray(data["psi_true"]),
            firms=pd.DataFrame(data["firms"]),
            survival_slopes=dict(data["survival_slopes"]),
            growth_slopes=dict(data["growth_slopes"]),
            planting_sd=dict(data["planting_sd"]),
            intercepts=dict(data["intercepts"]),
            shocks=None if data.get("shocks") is None else np.asarray(data["shocks"]),
            notes=list(data.get("notes", [])),
        )


def circular_relatedness(n: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Relatedness falling linearly with distance on a circle, plus symmetric noise."""
    k = np.arange(n)
    d = np.abs(k[:, None] - k[None, :])
    d = np.minimum(d, n - d)
    m = 1.0 - d / max(n // 2, 1)
    e = rng.normal(0.0, noise, size=(n, n))
    m = np.clip(m + (e + e.T) / 2, 0.0, 1.0)
    np.fill_diagonal(m, 1.0)
    return m


def _labels(prefix: str, n: int) -> list[str]:
    width = len(str(max(n - 1, 1)))
    return [f"{prefix}{k:0{width}d}" for k in range(n)]


def _sample_rows(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF draw: one column index per row of ``weights``."""
    c = np.cumsum(weights, axis=1)
    total = c[:, -1:]
    return np.minimum((c < u[:, None] * total).sum(axis=1), weights.shape[1] - 1)


def _shuffle_take(pool_keys: np.ndarray, req_keys: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Match requests to pool items sharing a key, without replacement.

    Returns the pool index per request; requests beyond a key's supply get -1.
    """
    pool_order = np.lexsort((rng.random(len(pool_keys)), pool_keys))
    pk = pool_keys[pool_order]
    req_order = np.argsort(req_keys, kind="stable")
    rk = req_keys[req_order]
    start = np.searchsorted(pk, rk, side="left")
    stop = np.searchsorted(pk, rk, side="right")
    first_req = np.searchsorted(rk, rk, side="left")
    rank = np.arange(len(rk)) - first_req
    ok = start + rank < stop
    out = np.full(len(req_keys), -1, dtype=np.int64)
    out[req_order[ok]] = pool_order[start[ok] + rank[ok]]
    return out


class _Generator:
    def __init__(self, cfg: SynthConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        rng = self.rng
        I, O, R = cfg.n_industries, cfg.n_occupations, cfg.n_regions
        self.I, self.O, self.R = I, O, R
        self.ind_labels = _labels("I", I)
        self.occ_labels = _labels("O", O)
        self.reg_labels = _labels("R", R)
        self.phi = circular_relatedness(I, cfg.relatedness_noise, rng)
        self.psi = circular_relatedness(O, cfg.relatedness_noise, rng)
        self.occ_switch = np.exp(cfg.occupation_sharpness * self.psi)
        np.fill_diagonal(self.occ_switch, 0.0)
        self.occ_center = np.round(np.arange(I) * O / I).astype(int)
        self.years = cfg.years
        self.shocks = self._draw_shocks()
        self._place_cells()
        self._init_incumbents()
        self.chunks: list[pd.DataFrame] = []
        self.new_firms: list[dict] = []
        self.slopes_s: dict[str, float] = {}
        self.slopes_g: dict[str, float] = {}
        self.plant_sd: dict[str, float] = {}
        self.intercepts: dict[str, float] = {}
        self.notes: list[str] = []

    # ---- setup -------------------------------------------------------------

    def _draw_shocks(self) -> np.ndarray:
        cfg, I = self.cfg, self.I
        ang = 2 * np.pi * np.arange(I) / I
        K = cfg.shock_harmonics
        out = np.zeros((len(self.years), I))
        for t in range(len(self.years)):
            if K == 0:
                # independent industry shocks
                s = self.rng.normal(size=I)
                out[t] = cfg.shock_sd * (s - s.mean()) / s.std()
                continue
            a = self.rng.normal(size=K)
            b = self.rng.normal(size=K)
            s = sum(a[k] * np.cos((k + 1) * ang) + b[k] * np.sin((k + 1) * ang) for k in range(K))
            sd = s.std()
            out[t] = cfg.shock_sd * (s - s.mean()) / sd if sd > 0 else 0.0
        return out

    def _place_cells(self) -> None:
        cfg, rng, I, R = self.cfg, self.rng, self.I, self.R
        present = rng.random((R, I)) < cfg.cell_presence
        # every industry and every region keeps at least one occupied cell
        for i in np.flatnonzero(~present.any(axis=0)):
            present[rng.integers(R), i] = True
        for r in np.flatnonzero(~present.any(axis=1)):
            present[r, rng.integers(I)] = True
        self.present = present
        n_new = cfg.n_new_firms
        n_short = int(round(cfg.short_lived_share * n_new))
        n_pion = int(round(cfg.pioneer_share * n_new))
        n_pion = min(n_pion, n_new - n_short)
        self.n_pioneers, self.n_short = n_pion, n_short
        self.n_nonpioneers = n_new - n_pion - n_short
        empty = np.flatnonzero(~present.ravel())
        cohorts = cfg.cohort_years
        if n_pion + n_short > 0:
            if len(empty) < len(cohorts):
                raise InfeasibleConfigError(
                    f"{len(empty)} empty region-industry cells for {len(cohorts)} pioneer cohorts")
            if n_pion > cfg.max_pioneers_per_cell * len(empty):
                raise InfeasibleConfigError(
                    f"{n_pion} pioneers exceed {len(empty)} empty cells x "
                    f"{cfg.max_pioneers_per_cell} per cell")
        perm = rng.permutation(empty)
        self.empty_by_cohort = np.array_split(perm, len(cohorts))

    def _init_incumbents(self) -> None:
        cfg, rng = self.cfg, self.rng
        n_inc = cfg.n_firms - cfg.n_new_firms
        cells = np.flatnonzero(self.present.ravel())
        firm_cell = np.concatenate([cells, rng.choice(cells, size=max(n_inc - len(cells), 0))])[:n_inc]
        if n_inc < len(cells):
            raise InfeasibleConfigError(f"{n_inc} incumbents cannot fill {len(cells)} occupied cells")
        firm_cell = np.sort(firm_cell)
        self.inc_cell = firm_cell
        self.inc_reg = firm_cell // self.I
        self.inc_ind = firm_cell % self.I
        self.n_inc = n_inc
        order = np.argsort(firm_cell, kind="stable")
        self.cell_firm_start = np.searchsorted(firm_cell[order], np.arange(self.R * self.I), side="left")
        self.cell_firm_count = np.bincount(firm_cell, minlength=self.R * self.I)
        self.cell_firms = order
        self.firm_size_weight = rng.lognormal(0.0, 0.5, n_inc)
        n_rest = cfg.n_workers - n_inc
        firm = np.concatenate([
            np.arange(n_inc),
            rng.choice(n_inc, size=n_rest, p=self.firm_size_weight / self.firm_size_weight.sum()),
        ])
        self.next_worker = 0
        self.w_id = self._new_ids(len(firm))
        self.w_firm = firm
        self.w_anchor = np.zeros(len(firm), dtype=bool)
        self.w_anchor[:n_inc] = True
        self.w_occ = self._entry_occupation(self.inc_ind[firm])
        self.w_school, self.w_u = self._new_traits(len(firm))

    def _new_ids(self, n: int) -> np.ndarray:
        ids = np.arange(self.next_worker, self.next_worker + n, dtype=np.int64)
        self.next_worker += n
        return ids

    def _new_traits(self, n: int):
        school = np.clip(np.round(self.rng.normal(11.0, 3.0, n)), 0, 20).astype(np.int64)
        u = self.rng.normal(0.0, 0.3, n)
        return school, u

    def _entry_occupation(self, ind: np.ndarray) -> np.ndarray:
        spread = np.round(self.rng.normal(0.0, max(self.O / 10, 1.0), len(ind))).astype(int)
        return (self.occ_center[ind] + spread) % self.O

    def _switch_occupation(self, occ: np.ndarray) -> np.ndarray:
        if len(occ) == 0:
            return occ
        return _sample_rows(self.occ_switch[occ], self.rng.random(len(occ)))

    # ---- yearly dynamics -----------------------------------------------------

    def _cell_employment(self) -> np.ndarray:
        L = np.bincount(self.inc_cell[self.w_firm], minlength=self.R * self.I).astype(float)
        return L.reshape(self.R, self.I)

    def _pick_firm(self, cell: np.ndarray) -> np.ndarray:
        u = self.rng.random(len(cell))
        k = np.floor(u * self.cell_firm_count[cell]).astype(np.int64)
        return self.cell_firms[self.cell_firm_start[cell] + k]

    def _destination_cells(self, reg: np.ndarray, ind: np.ndarray, L: np.ndarray, shock: np.ndarray,
                           taste: np.ndarray, shock_weight: float) -> np.ndarray:
        """Cell per request: region given, industry drawn by size, shock and relatedness."""
        W = L[reg] * np.exp(shock_weight * shock)[None, :] * np.exp(taste[:, None] * self.phi[ind])
        return reg * self.I + _sample_rows(W, self.rng.random(len(reg)))

    def _other_region(self, reg: np.ndarray, L: np.ndarray) -> np.ndarray:
        size = L.sum(axis=1)
        W = np.broadcast_to(size, (len(reg), self.R)).copy()
        W[np.arange(len(reg)), reg] = 0.0
        return _sample_rows(W, self.rng.random(len(reg)))

    def _step(self, t_idx: int, hired: np.ndarray) -> None:
        cfg, rng = self.cfg, self.rng
        shock = self.shocks[t_idx]
        L = self._cell_employment()
        keep = ~hired
        # separations fall in industries hit by positive demand shocks
        p_exit = cfg.exit_rate * np.exp(-cfg.shock_response * shock[self.inc_ind[self.w_firm]])
        exits = (rng.random(len(keep)) < p_exit) & ~self.w_anchor
        keep &= ~exits
        n_leave = int((~keep).sum())
        for name in ("w_id", "w_firm", "w_anchor", "w_occ", "w_school", "w_u"):
            setattr(self, name, getattr(self, name)[keep])
        # movers
        ind = self.inc_ind[self.w_firm]
        reg = self.inc_reg[self.w_firm]
        m = cfg.mobility_intensity
        p_move = np.clip(m * np.exp(-cfg.shock_response * shock[ind]), 0, 1) if m > 0 else np.zeros(len(ind))
        move = (rng.random(len(ind)) < p_move) & ~self.w_anchor
        mv = np.flatnonzero(move)
        if len(mv):
            cross = rng.random(len(mv)) < cfg.cross_region_share
            dreg = reg[mv].copy()
            if cross.any() and self.R > 1:
                dreg[cross] = self._other_region(reg[mv][cross], L)
            cell = self._destination_cells(dreg, ind[mv], L, shock,
                                           np.full(len(mv), cfg.industry_sharpness), cfg.shock_response)
            self.w_firm[mv] = self._pick_firm(cell)
            sw = rng.random(len(mv)) < cfg.occupation_switch_movers
            self.w_occ[mv[sw]] = self._switch_occupation(self.w_occ[mv[sw]])
        stay = np.flatnonzero(~move)
        if m > 0:
            sw = stay[rng.random(len(stay)) < 0.4 * m]
            self.w_occ[sw] = self._switch_occupation(self.w_occ[sw])
        # entrants restore the workforce
        if n_leave:
            Lc = (self._cell_employment() * np.exp(cfg.shock_response * shock)[None, :]).ravel()
            cell = rng.choice(self.R * self.I, size=n_leave, p=Lc / Lc.sum())
            firm = self._pick_firm(cell)
            school, u = self._new_traits(n_leave)
            self.w_id = np.concatenate([self.w_id, self._new_ids(n_leave)])
            self.w_firm = np.concatenate([self.w_firm, firm])
            self.w_anchor = np.concatenate([self.w_anchor, np.zeros(n_leave, bool)])
            self.w_occ = np.concatenate([self.w_occ, self._entry_occupation(self.inc_ind[firm])])
            self.w_school = np.concatenate([self.w_school, school])
            self.w_u = np.concatenate([self.w_u, u])

    # ---- new firms -------------------------------------------------------------

    def _births(self, cohort_idx: int, year: int) -> list[dict]:
        cfg, rng = self.cfg, self.rng
        n_c = len(cfg.cohort_years)

        def split(n):
            base = np.full(n_c, n // n_c)
            base[: n % n_c] += 1
            return int(base[cohort_idx])

        n_p, n_s, n_n = split(self.n_pioneers), split(self.n_short), split(self.n_nonpioneers)
        empty = self.empty_by_cohort[cohort_idx]
        occupied = np.flatnonzero(self.present.ravel())
        L = self._cell_employment().ravel()
        kinds = ["pioneer"] * n_p + ["short"] * n_s + ["incumbent_cell"] * n_n
        cells = np.concatenate([
            rng.choice(empty, size=n_p) if n_p else np.zeros(0, int),
            rng.choice(empty, size=n_s) if n_s else np.zeros(0, int),
            rng.choice(occupied, size=n_n, p=L[occupied] / L[occupied].sum()) if n_n else np.zeros(0, int),
        ]).astype(int)
        n = len(cells)
        if n_p and np.bincount(cells[:n_p]).max() > cfg.max_pioneers_per_cell:
            # spread pioneers evenly when the random draw crowds a cell
            cells[:n_p] = np.resize(rng.permutation(empty), n_p)
        q = rng.normal(size=n)
        related_demand = self._related_demand(year)
        a_loc = 4.0
        firms = []
        for k in range(n):
            firms.append({
                "kind": kinds[k],
                "cell": int(cells[k]),
                "region": int(cells[k] // self.I),
                "industry": int(cells[k] % self.I),
                "birth_year": year,
                "n0": int(1 + rng.poisson(cfg.mean_initial_size - 1)),
                "q": float(q[k]),
                "p_local": float(rng.beta(a_loc * cfg.local_hire_mean, a_loc * (1 - cfg.local_hire_mean)))
                if 0 < cfg.local_hire_mean < 1 else cfg.local_hire_mean,
                "p_keep": float(rng.beta(a_loc * cfg.occupation_keep_mean, a_loc * (1 - cfg.occupation_keep_mean)))
                if 0 < cfg.occupation_keep_mean < 1 else cfg.occupation_keep_mean,
                "taste": float(cfg.hiring_relatedness + cfg.hiring_relatedness_sd * rng.normal()
                               + cfg.confounder_strength * cfg.confounder_hiring * q[k]
                               - cfg.supply_response * related_demand[cells[k] // self.I, cells[k] % self.I]),
            })
        return firms

    def _related_demand(self, year: int) -> np.ndarray:
        """[region, industry] relatedness-and-employment weighted shock of the other local industries.

        In units of the shock sd; high values mean related workers are held by
        expanding industries.
        """
        s = self.shocks[year - self.years[0]]
        L = self._cell_employment()
        W = L[:, None, :] * self.phi[None, :, :]
        W[:, np.arange(self.I), np.arange(self.I)] = 0.0
        den = W.sum(axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(den > 0, (W @ s) / den, 0.0)
        return out / self.cfg.shock_sd if self.cfg.shock_sd > 0 else out

    def _hire(self, firms: list[dict], t_idx: int) -> np.ndarray:
        """Fill initial rosters from last year's incumbents; returns the pool mask of hired workers."""
        cfg, rng = self.cfg, self.rng
        n0 = np.array([f["n0"] for f in firms], dtype=np.int64)
        owner = np.repeat(np.arange(len(firms)), n0)
        h = len(owner)
        reg_f = np.array([f["region"] for f in firms])[owner]
        ind_f = np.array([f["industry"] for f in firms])[owner]
        p_local = np.array([f["p_local"] for f in firms])[owner]
        taste = np.array([f["taste"] for f in firms])[owner]
        fresh = rng.random(h) < (cfg.fresh_hire_share if cfg.mobility_intensity > 0 else 1.0)
        local = rng.random(h) < p_local
        L = self._cell_employment()
        src_reg = reg_f.copy()
        other = ~local & ~fresh
        if other.any() and self.R > 1:
            src_reg[other] = self._other_region(reg_f[other], L)
        pick = np.full(h, -1, dtype=np.int64)
        nf = np.flatnonzero(~fresh)
        hired = np.zeros(len(self.w_id), dtype=bool)
        if len(nf):
            shock = self.shocks[t_idx]
            cell = self._destination_cells(src_reg[nf], ind_f[nf], L, shock, taste[nf], 0.0)
            # demand shocks in the source industry keep its workers from leaving
            p_gone = expit(logit(cfg.unavailable_share) + cfg.availability_response * shock[cell % self.I]) \
                if 0 < cfg.unavailable_share < 1 else np.full(len(nf), cfg.unavailable_share)
            avail = rng.random(len(nf)) >= p_gone
            nf, cell = nf[avail], cell[avail]
            pool = np.flatnonzero(~self.w_anchor)
            got = _shuffle_take(self.inc_cell[self.w_firm[pool]], cell, rng)
            ok = got >= 0
            pick[nf[ok]] = pool[got[ok]]
            hired[pick[pick >= 0]] = True
        # occupations: keep, switch to a related one, or enter fresh
        occ = np.empty(h, dtype=np.int64)
        school = np.empty(h, dtype=np.int64)
        u = np.empty(h)
        wid = np.empty(h, dtype=np.int64)
        has = pick >= 0
        prior_occ = self.w_occ[pick[has]]
        keep = rng.random(int(has.sum())) < np.array([f["p_keep"] for f in firms])[owner[has]]
        new_occ = prior_occ.copy()
        new_occ[~keep] = self._switch_occupation(prior_occ[~keep])
        occ[has] = new_occ
        school[has] = self.w_school[pick[has]]
        u[has] = self.w_u[pick[has]]
        wid[has] = self.w_id[pick[has]]
        nh = int((~has).sum())
        occ[~has] = self._entry_occupation(ind_f[~has])
        school[~has], u[~has] = self._new_traits(nh)
        wid[~has] = self._new_ids(nh)
        for k, f in enumerate(firms):
            sel = owner == k
            f["workers"] = wid[sel]
            f["occ"] = occ[sel]
            f["school"] = school[sel]
            f["u"] = u[sel]
            f["headcount"] = {f["birth_year"]: int(sel.sum())}
        return hired

    # ---- spells ----------------------------------------------------------------

    def _wages(self, school, u) -> np.ndarray:
        w = np.exp(6.5 + 0.08 * school + u + self.rng.normal(0.0, 0.1, len(school)))
        return np.round(w, 2)

    def _emit(self, year: int) -> None:
        f = self.w_firm
        cols = {
            "worker": [self.w_id],
            "firm": [f.astype(np.int64)],
            "industry": [self.inc_ind[f]],
            "occupation": [self.w_occ],
            "region": [self.inc_reg[f]],
            "schooling_years": [self.w_school],
            "u": [self.w_u],
        }
        for k, nf in enumerate(self.new_firms):
            n = nf["headcount"].get(year, 0)
            if n <= 0:
                continue
            cols["worker"].append(nf["workers"][:n])
            cols["firm"].append(np.full(n, self.n_inc + k, dtype=np.int64))
            cols["industry"].append(np.full(n, nf["industry"]))
            cols["occupation"].append(nf["occ"][:n])
            cols["region"].append(np.full(n, nf["region"]))
            cols["schooling_years"].append(nf["school"][:n])
            cols["u"].append(nf["u"][:n])
        chunk = {k: np.concatenate(v) for k, v in cols.items()}
        chunk["wage"] = self._wages(chunk["schooling_years"], chunk.pop("u"))
        chunk["schooling_years"] = chunk["schooling_years"].astype(float)
        chunk["year"] = np.full(len(chunk["worker"]), year, dtype=np.int64)
        self.chunks.append(chunk)

    def _frame(self, chunks) -> pd.DataFrame:
        raw = {k: np.concatenate([c[k] for c in chunks]) for k in chunks[0]}
        wid, wcode = np.unique(raw["worker"], return_inverse=True)
        fid, fcode = np.unique(raw["firm"], return_inverse=True)
        wwidth = len(str(max(self.next_worker - 1, 1)))
        return pd.DataFrame({
            "worker_id": pd.Categorical.from_codes(wcode, [f"W{k:0{wwidth}d}" for k in wid]),
            "firm_id": pd.Categorical.from_codes(fcode, [self.firm_label(k) for k in fid]),
            "year": raw["year"],
            "industry": pd.Categorical.from_codes(raw["industry"], self.ind_labels),
            "occupation": pd.Categorical.from_codes(raw["occupation"], self.occ_labels),
            "region": pd.Categorical.from_codes(raw["region"], self.reg_labels),
            "wage": raw["wage"],
            "schooling_years": raw["schooling_years"],
        })

    def firm_label(self, k: int) -> str:
        width = len(str(max(self.cfg.n_firms - 1, 1)))
        return f"F{k:0{width}d}"

    # ---- measurement and outcome planting ------------------------------------------

    def _measure(self, cohort: list[dict], year: int) -> pd.DataFrame:
        sub = PanelDataset.from_frame(self._frame(self.chunks[-3:]))
        records = [FirmRecord(firm_id=self._label(f), birth_year=year,
                              industry=self.ind_labels[f["industry"]],
                              region=self.reg_labels[f["region"]]) for f in cohort]
        phi = relatedness_for_year(sub, "industry", year)
        psi = relatedness_for_year(sub, "occupation", year)
        prof = knowledge_profiles(sub, records, {year: phi}, {year: psi})
        return prof.loc[[r.firm_id for r in records]]

    def _label(self, f: dict) -> str:
        return self.firm_label(self.n_inc + f["index"])

    def _plant(self, cohort: list[dict], year: int) -> None:
        cfg, rng = self.cfg, self.rng
        fields = list(KNOWLEDGE_FIELDS)
        try:
            prof = self._measure(cohort, year)
            X = prof[fields].to_numpy(dtype=float)
            C = prof[list(CONTROL_FIELDS)].to_numpy(dtype=float)
        except KnowflowError as exc:
            # no measurable relatedness (e.g. zero mobility): outcomes from controls only
            self.notes.append(f"{year}: knowledge not measurable ({exc.code}); planted on controls only")
            n0 = np.array([f["n0"] for f in cohort], dtype=float)
            X = np.zeros((len(cohort), 4))
            C = np.column_stack([np.log(n0), np.zeros(len(cohort))])
        pion = np.array([f["kind"] == "pioneer" for f in cohort])
        live = np.array([f["kind"] != "short" for f in cohort])
        if not self.slopes_s:
            ref = X[pion] if pion.sum() > 2 else X[live]
            sd = ref.std(axis=0, ddof=1) if len(ref) > 1 else np.ones(4)
            sd = np.where(sd > 0, sd, 1.0)
            mean = ref.mean(axis=0) if len(ref) else np.zeros(4)
            cmean = C[pion].mean(axis=0) if pion.sum() else np.zeros(2)
            self.plant_sd = dict(zip(fields, map(float, sd)))
            self.slopes_s = {k: float(b / s) for k, b, s in zip(fields, cfg.survival_betas, sd)}
            self.slopes_g = {k: float(b / s) for k, b, s in zip(fields, cfg.growth_betas, sd)}
            bs = np.array(list(self.slopes_s.values()))
            bg = np.array(list(self.slopes_g.values()))
            # indices are centered at the reference means so every group keeps the target rates
            self.center = mean
            self.intercepts = {
                "survival": float(logit(cfg.survival_rate) - np.dot(cfg.survival_controls, cmean)),
                "growth": float(cfg.growth_mean - np.dot(cfg.growth_controls, cmean)),
                **{f"center_{k}": float(v) for k, v in zip(fields, mean)},
            }
        bs = np.array(list(self.slopes_s.values()))
        bg = np.array(list(self.slopes_g.values()))
        scale = np.where(pion, 1.0, cfg.nonpioneer_scale)
        X = np.nan_to_num(X)
        C = np.nan_to_num(C)
        Xc = X - self.center
        idx_s = self.intercepts["survival"] + scale * (Xc @ bs) + C @ np.asarray(cfg.survival_controls)
        q = np.array([f["q"] for f in cohort])
        idx_g = (self.intercepts["growth"] + scale * (Xc @ bg) + C @ np.asarray(cfg.growth_controls)
                 + cfg.confounder_strength * cfg.confounder_growth * q
                 + rng.normal(0.0, cfg.growth_noise, len(cohort)))
        surv = rng.random(len(cohort)) < expit(idx_s)
        early = rng.random(len(cohort)) < 0.5
        late_u = rng.random((len(cohort), len(self.years)))
        last_year = self.years[-1]
        for k, f in enumerate(cohort):
            f["Phi"], f["Psi"], f["edu"], f["rho"] = (float(v) for v in X[k])
            f["G"] = float(idx_g[k])
            f["p_survive"] = float(expit(idx_s[k]))
            n0 = f["n0"]
            if f["kind"] == "short":
                f["survive_draw"] = False
                f["death_year"] = year + 1
                continue
            f["survive_draw"] = bool(surv[k])
            path = {year + j: max(1, int(round(n0 * np.exp(f["G"] * j / 3)))) for j in (1, 2, 3)}
            if not surv[k]:
                death = year + (2 if early[k] else 3)
            else:
                death = None
                for j, y in enumerate(range(year + 4, last_year + 1)):
                    if late_u[k, j % late_u.shape[1]] < cfg.late_hazard:
                        death = y
                        break
            h3 = path[year + 3]
            for y in range(year + 1, last_year + 1):
                if death is not None and y >= death:
                    break
                f["headcount"][y] = path.get(y, h3)
            f["death_year"] = death
            extra = max(f["headcount"].values()) - n0
            if extra > 0:
                school, u = self._new_traits(extra)
                f["workers"] = np.concatenate([f["workers"], self._new_ids(extra)])
                f["occ"] = np.concatenate([f["occ"], self._entry_occupation(np.full(extra, f["industry"]))])
                f["school"] = np.concatenate([f["school"], school])
                f["u"] = np.concatenate([f["u"], u])

    # ---- driver ----------------------------------------------------------------

    def run(self) -> tuple[PanelDataset, GroundTruth]:
        cfg = self.cfg
        cohorts = {y: k for k, y in enumerate(cfg.cohort_years)}
        self._emit(self.years[0])
        for t_idx, year in enumerate(self.years[1:], start=1):
            cohort = []
            hired = np.zeros(len(self.w_id), dtype=bool)
            if year in cohorts:
                cohort = self._births(cohorts[year], year)
                hired = self._hire(cohort, t_idx)
                for f in cohort:
                    f["index"] = len(self.new_firms)
                    self.new_firms.append(f)
            self._step(t_idx, hired)
            self._emit(year)
            if cohort:
                self._plant(cohort, year)
        frame = self._frame(self.chunks)
        panel = PanelDataset.from_frame(frame)
        return panel, self._truth()

    def _truth(self) -> GroundTruth:
        rows = []
        for f in self.new_firms:
            rows.append({
                "firm_id": self._label(f),
                "birth_year": f["birth_year"],
                "industry": self.ind_labels[f["industry"]],
                "region": self.reg_labels[f["region"]],
                "kind": f["kind"],
                "is_pioneer": f["kind"] == "pioneer",
                "n0": f["n0"],
                "q": f["q"],
                "Phi": f.get("Phi", np.nan),
                "Psi": f.get("Psi", np.nan),
                "edu": f.get("edu", np.nan),
                "rho": f.get("rho", np.nan),
                "p_survive": f.get("p_survive", np.nan),
                "survive_draw": f.get("survive_draw"),
                "G": f.get("G", np.nan),
                "death_year": f.get("death_year"),
            })
        firms = pd.DataFrame(rows)
        if len(firms):
            firms["death_year"] = firms["death_year"].astype("Int64")
        return GroundTruth(
            config=self.cfg,
            industries=self.ind_labels,
            occupations=self.occ_labels,
            regions=self.reg_labels,
            phi_true=self.phi,
            psi_true=self.psi,
            firms=firms,
            survival_slopes=self.slopes_s,
            growth_slopes=self.growth_slopes_or_zero(),
            planting_sd=self.plant_sd,
            intercepts=self.intercepts,
            shocks=self.shocks,
            notes=self.notes,
        )

    def growth_slopes_or_zero(self) -> dict[str, float]:
        return self.slopes_g or {k: 0.0 for k in KNOWLEDGE_FIELDS}


def generate_panel(cfg: SynthConfig) -> tuple[PanelDataset, GroundTruth]:
    """Seeded synthetic panel and its planted ground truth."""
    panel, truth = _Generator(cfg).run()
    if not truth.survival_slopes:
        truth.survival_slopes = {k: 0.0 for k in KNOWLEDGE_FIELDS}
    return panel, truth


def write_classification_tables(truth: GroundTruth, directory: str | os.PathLike) -> dict[str, list[str]]:
    """Two-level code files (sector, code) per classification; returns paths per column."""
    os.makedirs(directory, exist_ok=True)
    out = {}
    for column, codes, group in (("industry", truth.industries, 5),
                                 ("occupation", truth.occupations, 5),
                                 ("region", truth.regions, 2)):
        top = sorted({f"{column[0].upper()}S{k // group}" for k in range(len(codes))})
        p0 = os.path.join(directory, f"{column}_level0.csv")
        p1 = os.path.join(directory, f"{column}_level1.csv")
        pd.DataFrame({"code": top, "parent_code": ""}).to_csv(p0, index=False, lineterminator="\n")
        pd.DataFrame({"code": codes,
                      "parent_code": [f"{column[0].upper()}S{k // group}" for k in range(len(codes))]}
                     ).to_csv(p1, index=False, lineterminator="\n")
        out[column] = [p0, p1]
    return out


def write_synthetic(panel: PanelDataset, truth: GroundTruth, directory: str | os.PathLike) -> dict[str, str]:
    """Spell file, classification tables and ground-truth sidecar under ``directory``."""
    os.makedirs(directory, exist_ok=True)
    spells = os.path.join(directory, "spells.csv")
    write_spells(panel, spells)
    tables = write_classification_tables(truth, os.path.join(directory, "classifications"))
    sidecar = os.path.join(directory, "ground_truth.json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(truth.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return {"spells": spells, "ground_truth": sidecar,
            **{f"{k}_tables": ";".join(v) for k, v in tables.items()}}


def read_ground_truth(path: str | os.PathLike) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        return GroundTruth.from_json(json.load(fh))
