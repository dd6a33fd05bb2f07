import dataclasses
import hashlib

import numpy as np
import pandas as pd
import pytest

from knowflow.errors import ConfigError, InfeasibleConfigError
from knowflow.ingest import parse_spells
from knowflow.synth import (SynthConfig, circular_relatedness, generate_panel, read_ground_truth,
                            write_synthetic)

from conftest import SMALL


def digest(panel):
    return hashlib.sha256(pd.util.hash_pandas_object(panel.spells, index=False).values.tobytes()).hexdigest()


def test_same_seed_same_panel(small_synth):
    panel, truth = small_synth
    again, truth2 = generate_panel(SynthConfig(seed=1, **SMALL))
    assert digest(panel) == digest(again)
    pd.testing.assert_frame_equal(truth.firms, truth2.firms)
    other, _ = generate_panel(SynthConfig(seed=2, **SMALL))
    assert digest(other) != digest(panel)


@pytest.mark.parametrize("change", [
    {"n_industries": 2},
    {"n_regions": 1},
    {"n_years": 3},
    {"pioneer_share": 1.5},
    {"survival_rate": 1.0},
    {"survival_betas": (0.1, 0.2)},
    {"new_firm_share": 1.0},
    {"n_workers": 100},
    {"max_pioneers_per_cell": 1, "n_industries": 3, "n_regions": 2},
])
def test_infeasible_configs_are_rejected(change):
    cfg = dataclasses.replace(SynthConfig(seed=0, **SMALL), **change)
    with pytest.raises(InfeasibleConfigError):
        generate_panel(cfg)


def test_from_mapping():
    cfg = SynthConfig.from_mapping({"seed": "3", "survival_betas": "0.4,0,0,0.2", "shock_sd": "0.25"})
    assert cfg.seed == 3 and cfg.survival_betas == (0.4, 0.0, 0.0, 0.2) and cfg.shock_sd == 0.25
    with pytest.raises(ConfigError):
        SynthConfig.from_mapping({"nope": "1"})
    with pytest.raises(ConfigError):
        SynthConfig.from_mapping({"seed": "x"})


def test_planted_structure(small_synth):
    panel, truth = small_synth
    cfg = truth.config
    assert panel.year_range == (cfg.first_year, cfg.first_year + cfg.n_years - 1)
    assert np.allclose(truth.phi_true, truth.phi_true.T)
    assert np.allclose(np.diag(truth.phi_true), 1.0)
    assert set(truth.firms["birth_year"]) <= set(cfg.cohort_years)
    assert truth.firms["is_pioneer"].sum() > 0
    assert set(truth.survival_slopes) == {"Phi", "Psi", "edu", "rho"}
    order = truth.relatedness_order()
    a, b = order[0]
    i, j = truth.industries.index(a), truth.industries.index(b)
    assert truth.phi_true[i, j] == truth.phi_true[np.triu_indices(len(truth.industries), 1)].max()


def test_circular_relatedness_decays_with_distance():
    m = circular_relatedness(12, 0.0, np.random.default_rng(0))
    assert m[0, 1] > m[0, 3] > m[0, 6]
    assert m[0, 1] == pytest.approx(m[0, 11])


def test_write_and_read_back(tmp_path, small_synth):
    panel, truth = small_synth
    paths = write_synthetic(panel, truth, tmp_path)
    again = parse_spells(paths["spells"])
    pd.testing.assert_frame_equal(again.spells, panel.spells)
    back = read_ground_truth(paths["ground_truth"])
    assert back.config == truth.config
    assert np.array_equal(back.phi_true, truth.phi_true)
    assert back.pioneers == truth.pioneers
    assert back.death_years() == truth.death_years()
