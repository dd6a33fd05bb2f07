"""Regression tables: coefficient, standard error in parentheses, stars, fit rows."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .results import EstimationResult

STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))
INTEGER_ROWS = ("Observations", "Clusters", "Events")

# fit-statistic rows: label -> getter
FIT_ROWS = {
    "Observations": lambda f: f.n_obs,
    "Clusters": lambda f: f.n_clusters,
    "Log likelihood": lambda f: f.log_likelihood,
    "McFadden R2": lambda f: f.mcfadden_pseudo_r2,
    "AICc": lambda f: f.aicc,
    "R2": lambda f: f.r2,
    "Adjusted R2": lambda f: f.adj_r2,
    "F Statistic": lambda f: f.f_statistic,
    "Wald Test": lambda f: f.extra.get("wald"),
    "Events": lambda f: f.extra.get("n_events"),
    "First-stage F": lambda f: f.extra.get("first_stage_F"),
}


def stars(p: float) -> str:
    if p is None or not np.isfinite(p):
        return ""
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def _fmt(x, digits: int) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if not np.isfinite(x):
        return ""
    return f"{x:.{digits}f}"


def coefficient_frame(columns: Mapping[str, EstimationResult],
                      terms: Sequence[str] | None = None) -> pd.DataFrame:
    """Long numeric table: model, term, coef, se, p, stars."""
    rows = []
    for model, fit in columns.items():
        use = terms if terms is not None else fit.names
        for term in use:
            if term not in fit.names:
                continue
            k = fit.names.index(term)
            p = float(fit.pvalues[k])
            rows.append({"model": model, "term": term, "coef": float(fit.params[k]),
                         "se": float(fit.se[k]), "p": p, "stars": stars(p)})
    return pd.DataFrame(rows, columns=["model", "term", "coef", "se", "p", "stars"])


def fit_frame(columns: Mapping[str, EstimationResult],
              stat_rows: Sequence[str] = tuple(FIT_ROWS)) -> pd.DataFrame:
    """Long numeric table of fit statistics: model, statistic, value."""
    rows = []
    for model, fit in columns.items():
        for label in stat_rows:
            v = FIT_ROWS[label](fit)
            if v is None:
                continue
            rows.append({"model": model, "statistic": label, "value": float(v)})
    return pd.DataFrame(rows, columns=["model", "statistic", "value"])


def regression_table(columns: Mapping[str, EstimationResult], terms: Sequence[str],
                     labels: Mapping[str, str] | None = None,
                     stat_rows: Sequence[str] = ("Observations", "McFadden R2", "AICc",
                                                 "Adjusted R2", "F Statistic"),
                     digits: int = 3) -> pd.DataFrame:
    """Text layout: one column per model, a coefficient row and an (se) row per term."""
    return layout(coefficient_frame(columns, terms), fit_frame(columns, stat_rows),
                  list(columns), terms, labels, stat_rows, digits)


def layout(coefs: pd.DataFrame, fits: pd.DataFrame, models: Sequence[str], terms: Sequence[str],
           labels: Mapping[str, str] | None = None, stat_rows: Sequence[str] = (),
           digits: int = 3) -> pd.DataFrame:
    """Same layout from the long frames of :func:`coefficient_frame` and :func:`fit_frame`."""
    labels = dict(labels or {})
    cell = {(r.model, r.term): r for r in coefs.itertuples(index=False)}
    stat = {(r.model, r.statistic): r.value for r in fits.itertuples(index=False)}
    index: list[str] = []
    body: dict[str, list[str]] = {m: [] for m in models}
    for term in terms:
        if not any((m, term) in cell for m in models):
            continue
        index += [labels.get(term, term), ""]
        for m in models:
            r = cell.get((m, term))
            body[m] += (["", ""] if r is None else
                        [f"{_fmt(float(r.coef), digits)}{r.stars if isinstance(r.stars, str) else ''}",
                         f"({_fmt(float(r.se), digits)})"])
    for label in stat_rows:
        values = {m: stat.get((m, label)) for m in models}
        if all(v is None or not np.isfinite(v) for v in values.values()):
            continue
        index.append(label)
        for m, v in values.items():
            if v is not None and label in INTEGER_ROWS and np.isfinite(v):
                v = int(v)
            body[m].append(_fmt(v, digits))
    return pd.DataFrame(body, index=index)


def render_text(table: pd.DataFrame, note: str = "*p<0.1; **p<0.05; ***p<0.01") -> str:
    """Fixed-width rendering with the significance note underneath."""
    cols = [str(c) for c in table.columns]
    first = max([len(str(i)) for i in table.index] + [0])
    widths = [max(len(c), *(len(str(v)) for v in table[c0])) for c, c0 in zip(cols, table.columns)]
    lines = [" " * first + "  " + "  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines.append("-" * len(lines[0]))
    for label, row in table.iterrows():
        lines.append(str(label).ljust(first) + "  " + "  ".join(str(v).rjust(w) for v, w in zip(row, widths)))
    lines.append("-" * len(lines[0]))
    lines.append(note)
    return "\n".join(lines) + "\n"
