import logging
import warnings

import numpy as np
import pandas as pd
import pytest

from knowflow.ingest import PanelDataset
from knowflow.synth import SynthConfig, generate_panel

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []

SMALL = dict(n_workers=8000, n_firms=1000, n_industries=12, n_occupations=14, n_regions=6,
             max_pioneers_per_cell=6)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet():
    logging.getLogger("knowflow").setLevel(logging.ERROR)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def small_synth():
    """Small seeded synthetic panel and its ground truth."""
    return generate_panel(SynthConfig(seed=1, **SMALL))


def make_panel(rows, epochs=()):
    """Panel from (worker, firm, year, industry, occupation, region[, wage, school]) tuples."""
    recs = []
    for r in rows:
        w, f, y, i, o, g = r[:6]
        wage = r[6] if len(r) > 6 else 1000.0
        school = r[7] if len(r) > 7 else 10.0
        recs.append({"worker_id": w, "firm_id": f, "year": y, "industry": i, "occupation": o,
                     "region": g, "wage": wage, "schooling_years": school})
    return PanelDataset.from_frame(pd.DataFrame(recs), epoch_boundaries=epochs)


def random_panel(rng: np.random.Generator, n_firms: int = 60, first_year: int = 2001,
                 n_years: int = 12, n_ind: int = 5, n_reg: int = 3, epochs=()) -> PanelDataset:
    """Random firm activity with gaps; most spells in the firm's home industry and region."""
    rows = []
    wid = 0
    for f in range(n_firms):
        ind, reg = int(rng.integers(n_ind)), int(rng.integers(n_reg))
        start = int(rng.integers(first_year, first_year + n_years))
        active = rng.random(n_years) < rng.uniform(0.3, 0.95)
        for k, y in enumerate(range(first_year, first_year + n_years)):
            if y < start or not active[k]:
                continue
            for _ in range(int(rng.integers(1, 4))):
                i = ind if rng.random() < 0.85 else int(rng.integers(n_ind))
                g = reg if rng.random() < 0.9 else int(rng.integers(n_reg))
                rows.append((f"W{wid:05d}", f"F{f:03d}", y, f"I{i}", f"O{int(rng.integers(4))}", f"R{g}",
                             float(rng.uniform(500, 3000)), float(rng.integers(4, 17))))
                wid += 1
    return make_panel(rows, epochs)


@pytest.fixture(scope="session")
def small_analysis(small_synth):
    """Every model and figure table on the small synthetic panel."""
    from knowflow.pipeline import run_analysis
    panel, _ = small_synth
    logging.getLogger("knowflow").setLevel(logging.ERROR)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_analysis(panel)
