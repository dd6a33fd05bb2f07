"""Parsing and indexing of employer-employee spell records.

A spell is one (worker, firm, year) observation carrying the industry,
occupation and region of the job plus wage and schooling. The parsed panel is
an immutable wrapper around a pandas frame whose id and code columns are
categoricals with lexicographically sorted categories, so integer codes are
stable for a given input.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import EpochViolationError, MalformedInputError, NotFoundError

log = logging.getLogger(__name__)

SPELL_COLUMNS = (
    "worker_id",
    "firm_id",
    "year",
    "industry",
    "occupation",
    "region",
    "wage",
    "schooling_years",
)
CODE_COLUMNS = ("industry", "occupation", "region")
ID_COLUMNS = ("worker_id", "firm_id")
DEFAULT_EPOCHS = (2006,)
MAX_SCHOOLING = 30.0


@dataclass(frozen=True)
class ClassificationTable:
    """Code hierarchy, top level first.

    ``levels[k]`` maps each code of level ``k`` to its parent code in level
    ``k - 1`` (the parent of a top-level code is ignored). Codes finer than the
    analysis level are rolled up to it.
    """

    name: str
    levels: tuple[dict[str, str], ...]
    analysis_level: int = -1
    labels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for k in range(1, len(self.levels)):
            parents = self.levels[k - 1]
            missing = {p for p in self.levels[k].values() if p not in parents}
            if missing:
                raise ValueError(
                    f"{self.name}: level {k} has parents absent from level {k - 1}: "
                    f"{sorted(missing)[:5]}"
                )

    @property
    def _level(self) -> int:
        return self.analysis_level % len(self.levels)

    @cached_property
    def _lookup(self) -> dict[str, str | None]:
        """Every known code mapped to its analysis-level ancestor (None if coarser)."""
        target = self._level
        out: dict[str, str | None] = {}
        for k, level in enumerate(self.levels):
            for code in level:
                if k < target:
                    out.setdefault(code, None)
                    continue
                c = code
                for j in range(k, target, -1):
                    c = self.levels[j][c]
                out[code] = c
        return out

    def resolve(self, code: str) -> str | None:
        """Analysis-level code for ``code``, or None when it cannot be resolved."""
        return self._lookup.get(code)

    @property
    def codes(self) -> list[str]:
        return sorted(self.levels[self._level])

    def top_level(self, code: str) -> str:
        c = code
        for j in range(self._level, 0, -1):
            c = self.levels[j][c]
        return c

    @classmethod
    def from_files(cls, name, paths: Sequence[str | os.PathLike], delimiter=",",
                   analysis_level=-1) -> "ClassificationTable":
        """Read one two-column (code, parent_code) file per level, top level first.

        A header row is skipped when its first field is literally ``code``.
        """
        levels = []
        for path in paths:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = [r for r in csv.reader(fh, delimiter=delimiter) if r]
            if rows and rows[0][0].strip().lower() == "code":
                rows = rows[1:]
            levels.append({r[0].strip(): (r[1].strip() if len(r) > 1 else "") for r in rows})
        return cls(name=name, levels=tuple(levels), analysis_level=analysis_level)


@dataclass
class ParseReport:
    n_input: int = 0
    n_accepted: int = 0
    n_rejected: int = 0
    n_malformed: int = 0
    n_deduplicated: int = 0
    rejected_lines: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "n_malformed": self.n_malformed,
            "n_deduplicated": self.n_deduplicated,
            "rejected_lines": list(self.rejected_lines[:100]),
        }


def _categorize(values) -> pd.Categorical:
    """Categorical with sorted string categories (reuses an existing one if already so)."""
    if isinstance(getattr(values, "dtype", None), pd.CategoricalDtype):
        cats = values.cat.categories if isinstance(values, pd.Series) else values.categories
        if cats.dtype == object and cats.is_monotonic_increasing:
            return pd.Categorical(values)
    return pd.Categorical(np.asarray(values, dtype=object).astype(str))


@dataclass(frozen=True)
class PanelDataset:
    spells: pd.DataFrame
    epoch_boundaries: tuple[int, ...] = DEFAULT_EPOCHS
    report: ParseReport = field(default_factory=ParseReport, compare=False)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, epoch_boundaries=DEFAULT_EPOCHS,
                   report: ParseReport | None = None) -> "PanelDataset":
        """Normalize dtypes, collapse duplicate (worker, firm, year) rows, sort."""
        df = pd.DataFrame({
            "worker_id": _categorize(frame["worker_id"]),
            "firm_id": _categorize(frame["firm_id"]),
            "year": np.asarray(frame["year"], dtype=np.int64),
            "industry": _categorize(frame["industry"]),
            "occupation": _categorize(frame["occupation"]),
            "region": _categorize(frame["region"]),
            "wage": np.asarray(frame["wage"], dtype=np.float64),
            "schooling_years": np.asarray(frame["schooling_years"], dtype=np.float64),
        })
        n_before = len(df)
        year = df["year"].to_numpy()
        fcode = df["firm_id"].cat.codes.to_numpy().astype(np.int64)
        wcode = df["worker_id"].cat.codes.to_numpy().astype(np.int64)
        nf, nw = max(len(df["firm_id"].cat.categories), 1), max(len(df["worker_id"].cat.categories), 1)
        span = int(year.max() - year.min() + 1) if len(df) else 1
        if span * nf * nw < 2 ** 62:
            key = ((year - (year.min() if len(df) else 0)) * nf + fcode) * nw + wcode
            order = np.argsort(key, kind="stable")
            if not (np.diff(key[order]) == 0).any():
                # no duplicate (worker, firm, year): the key order is already total
                df = df.iloc[order].reset_index(drop=True)
                return cls._finish(df, n_before, epoch_boundaries, report)
        # highest wage wins; remaining ties broken by the other columns' codes
        order = np.lexsort((
            df["schooling_years"].to_numpy(),
            df["region"].cat.codes.to_numpy(),
            df["occupation"].cat.codes.to_numpy(),
            df["industry"].cat.codes.to_numpy(),
            -df["wage"].to_numpy(),
            df["worker_id"].cat.codes.to_numpy(),
            df["firm_id"].cat.codes.to_numpy(),
            df["year"].to_numpy(),
        ))
        df = df.iloc[order]
        key = df[["year", "firm_id", "worker_id"]]
        df = df[~key.duplicated(keep="first")].reset_index(drop=True)
        return cls._finish(df, n_before, epoch_boundaries, report)

    @classmethod
    def _finish(cls, df, n_before, epoch_boundaries, report) -> "PanelDataset":
        for col in ("worker_id", "firm_id", *CODE_COLUMNS):
            df[col] = df[col].cat.remove_unused_categories()
        report = report or ParseReport(n_input=n_before, n_accepted=n_before)
        report.n_deduplicated = n_before - len(df)
        report.n_accepted = len(df)
        return cls(spells=df, epoch_boundaries=tuple(sorted(epoch_boundaries)), report=report)

    def __len__(self):
        return len(self.spells)

    @property
    def year_range(self) -> tuple[int, int]:
        y = self.spells["year"]
        return int(y.min()), int(y.max())

    @property
    def years(self) -> np.ndarray:
        lo, hi = self.year_range
        return np.arange(lo, hi + 1)

    def epoch_of(self, year) -> np.ndarray | int:
        idx = np.searchsorted(np.asarray(self.epoch_boundaries), year, side="right")
        return int(idx) if np.ndim(idx) == 0 else idx

    def same_epoch(self, *years: int) -> bool:
        return len({self.epoch_of(int(y)) for y in years}) == 1

    def require_same_epoch(self, *years: int) -> None:
        if not self.same_epoch(*years):
            raise EpochViolationError(
                f"years {sorted(years)} straddle a classification epoch boundary "
                f"{list(self.epoch_boundaries)}"
            )

    def epoch_window(self, year: int, lookback: int) -> tuple[int, int]:
        """Years [year - lookback, year - 1] clipped to the epoch containing ``year``."""
        lo = year - lookback
        e = self.epoch_of(year)
        if e > 0:
            lo = max(lo, self.epoch_boundaries[e - 1])
        return lo, year - 1

    def codes(self, column: str) -> np.ndarray:
        return self.spells[column].cat.codes.to_numpy().astype(np.int64)

    def labels(self, column: str) -> list[str]:
        return list(self.spells[column].cat.categories)

    @cached_property
    def headcounts(self) -> pd.DataFrame:
        """Firm x year headcount table over the full year range (zeros filled)."""
        counts = self.spells.groupby(["firm_id", "year"], observed=True).size()
        table = counts.unstack("year", fill_value=0)
        table = table.reindex(columns=self.years, fill_value=0)
        return table.astype(np.int64)

    def firm_frame(self, firm_id: str) -> pd.DataFrame:
        if firm_id not in self.spells["firm_id"].cat.categories:
            raise NotFoundError(f"unknown firm_id {firm_id!r}")
        return self.spells[self.spells["firm_id"] == firm_id]


def _strip(col: pd.Series) -> np.ndarray:
    """Whitespace-stripped values; strips each distinct value once."""
    codes, uniq = pd.factorize(col.to_numpy(dtype=object))
    stripped = np.array([u.strip() for u in uniq] + [""], dtype=object)
    return stripped[codes]


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return float("nan")


def _to_float(col: pd.Series) -> np.ndarray:
    # float() rounds correctly; pandas' fast parser can be off by one ulp,
    # which would break write/read round trips
    codes, uniq = pd.factorize(col.to_numpy(dtype=object))
    vals = np.array([_parse_float(u) for u in uniq] + [float("nan")], dtype=np.float64)
    return vals[codes]


def parse_spells(
    source,
    schema: Mapping[str, str] | None = None,
    *,
    delimiter: str = ",",
    tables: Mapping[str, ClassificationTable] | None = None,
    tolerance: float = 0.01,
    epoch_boundaries: Iterable[int] = DEFAULT_EPOCHS,
) -> PanelDataset:
    """Read delimited spell records into a validated :class:`PanelDataset`.

    ``schema`` maps canonical column names to header names in the file.
    Structurally malformed rows (wrong field count, unparsable or out-of-range
    numbers) count against ``tolerance``; exceeding it raises
    :class:`MalformedInputError`. Rows whose codes do not resolve in ``tables``
    are rejected and logged but never abort the parse.
    """
    schema = {c: c for c in SPELL_COLUMNS} | dict(schema or {})
    tables = dict(tables or {})
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            text = fh.read()
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")

    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedInputError("empty input: header row required", line=1) from None
    try:
        positions = [header.index(schema[c]) for c in SPELL_COLUMNS]
    except ValueError as exc:
        raise MalformedInputError(f"header missing a mapped column ({exc})", line=1) from None

    width = len(header)
    rows: list[list[str]] = []
    lines: list[int] = []
    bad_shape: list[int] = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            bad_shape.append(lineno)
            continue
        rows.append([row[p] for p in positions])
        lines.append(lineno)
    n_input = len(rows) + len(bad_shape)

    raw = pd.DataFrame(rows, columns=list(SPELL_COLUMNS), dtype=str) if rows else \
        pd.DataFrame({c: pd.Series(dtype=str) for c in SPELL_COLUMNS})
    line_arr = np.asarray(lines, dtype=np.int64)
    year = _to_float(raw["year"])
    wage = _to_float(raw["wage"])
    school = _to_float(raw["schooling_years"])
    bad = (
        ~np.isfinite(year) | (year != np.round(year))
        | ~np.isfinite(wage) | (wage < 0)
        | ~np.isfinite(school) | (school < 0) | (school > MAX_SCHOOLING)
    )
    text = {c: _strip(raw[c]) for c in (*ID_COLUMNS, *CODE_COLUMNS)}
    for c in (*ID_COLUMNS, *CODE_COLUMNS):
        bad |= text[c] == ""
    malformed_lines = sorted(bad_shape + line_arr[bad].tolist())
    if malformed_lines and len(malformed_lines) > tolerance * max(n_input, 1):
        raise MalformedInputError(
            f"{len(malformed_lines)} malformed rows out of {n_input} exceed tolerance "
            f"{tolerance:.2%}; first malformed row",
            line=malformed_lines[0],
        )

    keep = ~bad
    resolved = {}
    for c in CODE_COLUMNS:
        values = text[c]
        if c in tables:
            table = tables[c]
            uniq, inv = np.unique(values.astype(str), return_inverse=True)
            mapped = np.array([table.resolve(u) for u in uniq], dtype=object)[inv]
            unresolved = np.array([m is None for m in mapped])
            if (unresolved & keep).any():
                for ln, v in zip(line_arr[unresolved & keep][:10], values[unresolved & keep][:10]):
                    log.warning("line %d: unresolvable %s code %r; row rejected", ln, c, v)
            keep &= ~unresolved
            values = mapped
        resolved[c] = values
    rejected_lines = sorted(malformed_lines + line_arr[~bad & ~keep].tolist())

    frame = pd.DataFrame({
        "worker_id": text["worker_id"][keep],
        "firm_id": text["firm_id"][keep],
        "year": year[keep].astype(np.int64),
        "industry": resolved["industry"][keep],
        "occupation": resolved["occupation"][keep],
        "region": resolved["region"][keep],
        "wage": wage[keep],
        "schooling_years": school[keep],
    })
    report = ParseReport(
        n_input=n_input,
        n_rejected=len(rejected_lines),
        n_malformed=len(malformed_lines),
        rejected_lines=rejected_lines,
    )
    panel = PanelDataset.from_frame(frame, epoch_boundaries=tuple(epoch_boundaries), report=report)
    log.info("parsed %d rows: %d accepted, %d rejected, %d duplicates collapsed",
             n_input, report.n_accepted, report.n_rejected, report.n_deduplicated)
    return panel


def write_spells(panel_or_frame, path, delimiter=","):
    """Write spells in the delimited layout :func:`parse_spells` reads."""
    df = panel_or_frame.spells if isinstance(panel_or_frame, PanelDataset) else panel_or_frame
    out = pd.DataFrame({c: df[c].astype(str) if c in (*ID_COLUMNS, *CODE_COLUMNS) else df[c]
                        for c in SPELL_COLUMNS})
    out.to_csv(path, sep=delimiter, index=False, float_format="%.17g", lineterminator="\n")


def firm_activity_series(panel: PanelDataset, firm_id: str) -> dict[int, int]:
    """Headcount per year over the panel's year range; zero marks a non-reporting year."""
    if firm_id not in panel.headcounts.index:
        raise NotFoundError(f"unknown firm_id {firm_id!r}")
    row = panel.headcounts.loc[firm_id]
    return {int(y): int(n) for y, n in row.items()}


def worker_history(panel: PanelDataset, worker_id: str, as_of_year: int,
                   lookback_years: int = 2) -> list[tuple[int, str, str, str]]:
    """Spells of ``worker_id`` in the ``lookback_years`` before ``as_of_year``, newest first.

    The window never reaches back past the start of ``as_of_year``'s
    classification epoch.
    """
    if lookback_years < 1:
        raise ValueError("lookback_years must be >= 1")
    s = panel.spells
    if worker_id not in s["worker_id"].cat.categories:
        return []
    lo, hi = panel.epoch_window(as_of_year, lookback_years)
    sel = s[(s["worker_id"] == worker_id) & (s["year"] >= lo) & (s["year"] <= hi)]
    sel = sel.sort_values(["year", "firm_id"], ascending=[False, True])
    return [
        (int(r.year), str(r.industry), str(r.occupation), str(r.region))
        for r in sel.itertuples(index=False)
    ]
