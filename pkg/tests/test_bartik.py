import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knowflow.bartik import (bartik_table, compute_bartik, leave_one_out_growth,
                             leave_one_out_growth_matrix, local_growth_grid, region_industry_employment,
                             shock_grid)
from knowflow.errors import EpochViolationError
from knowflow.relatedness import RelatednessMatrix

from conftest import make_panel, random_panel


def random_phi(rng, labels, year=2008):
    n = len(labels)
    a = rng.uniform(size=(n, n))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 1.0)
    return RelatednessMatrix("industry", year, tuple(labels), a)


def shock_by_loop(panel, phi, region, industry, year):
    """Raw-spell counts, leave-one-out growth and the weighted mean, one industry at a time."""
    s = panel.spells
    rows = list(zip(s["worker_id"].astype(str), s["year"].astype(int), s["industry"].astype(str),
                    s["region"].astype(str)))

    def workers(pred):
        return len({w for w, y, i, r in rows if pred(y, i, r)})
    num = den = 0.0
    for other in phi.entities:
        if other == industry:
            continue
        L = workers(lambda y, i, r: y == year and i == other and r == region)
        now = workers(lambda y, i, r: y == year and i == other and r != region)
        prev = workers(lambda y, i, r: y == year - 1 and i == other and r != region)
        w = phi.lookup(industry, other) * L
        if now == 0 or prev == 0 or w <= 0:
            continue
        num += w * (np.log(now) - np.log(prev))
        den += w
    return num / den if den > 0 else float("nan")


def test_table_matches_loop_oracle():
    rng = np.random.default_rng(41)
    p = random_panel(rng, n_firms=70, n_ind=5, n_reg=3)
    years = (2005, 2008)
    phi = {t: random_phi(rng, p.labels("industry"), t) for t in years}
    table = bartik_table(p, phi)
    assert len(table) == 2 * 3 * 5
    n_defined = 0
    for row in table.itertuples():
        want = shock_by_loop(p, phi[row.year], row.region, row.industry, row.year)
        if np.isnan(want):
            assert np.isnan(row.B)
        else:
            assert row.B == pytest.approx(want, abs=1e-12)
            n_defined += 1
        g = leave_one_out_growth(p, row.industry, row.region, row.year)
        assert (np.isnan(g) and np.isnan(row.g_own)) or g == pytest.approx(row.g_own, abs=1e-12)
    assert n_defined > 10


def test_scalar_shock_matches_grid():
    rng = np.random.default_rng(42)
    p = random_panel(rng, n_firms=70)
    phi = random_phi(rng, p.labels("industry"))
    L_now = region_industry_employment(p, 2008)
    g = leave_one_out_growth_matrix(L_now, region_industry_employment(p, 2007))
    value, ncomp = shock_grid(phi.values, L_now, g)
    for r, region in enumerate(p.labels("region")):
        for i, ind in enumerate(p.labels("industry")):
            one = compute_bartik(phi, L_now[r], g[r], region, ind, 2008)
            assert one.n_components == ncomp[r, i]
            if one.defined:
                assert one.value == pytest.approx(value[r, i], abs=1e-12)
                assert sum(c.share for c in one.components) == pytest.approx(1.0)
                assert ind not in {c.industry for c in one.components}
            else:
                assert np.isnan(value[r, i]) and one.reason == "zero_denominator"


def test_leave_one_out_excludes_own_region():
    # industry A grows only in region r1; outside r1 it is flat
    rows = [(f"a{k}", "F1", 2004, "A", "o", "r1") for k in range(2)]
    rows += [(f"b{k}", "F1", 2005, "A", "o", "r1") for k in range(8)]
    rows += [(f"c{k}", "F2", y, "A", "o", "r2") for k in range(3) for y in (2004, 2005)]
    p = make_panel(rows)
    assert leave_one_out_growth(p, "A", "r1", 2005) == 0.0
    assert leave_one_out_growth(p, "A", "r2", 2005) == pytest.approx(np.log(4))


def test_undefined_without_related_local_employment():
    phi = RelatednessMatrix("industry", 2010, ("A", "B", "C"), np.eye(3))
    shock = compute_bartik(phi, {"A": 5, "B": 4, "C": 3}, {"A": 0.1, "B": 0.2, "C": 0.3}, "r", "A", 2010)
    assert not shock.defined and shock.n_components == 0


def test_local_growth_grid_is_unweighted_shock():
    rng = np.random.default_rng(43)
    L = rng.integers(0, 20, (3, 5)).astype(float)
    g = rng.normal(size=(3, 5))
    g[0, 2] = np.nan
    flat = local_growth_grid(L, g)
    value, _ = shock_grid(np.ones((5, 5)), L, g)
    assert np.allclose(flat, value, equal_nan=True)


def test_epoch_boundary_is_refused():
    p = make_panel([("w", "F", y, "A", "o", "r") for y in (2005, 2006)], epochs=(2006,))
    phi = {2006: RelatednessMatrix("industry", 2006, ("A",), np.eye(1))}
    with pytest.raises(EpochViolationError):
        bartik_table(p, phi)
    with pytest.raises(ValueError):
        bartik_table(p, phi, local_year="t+1")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_shock_is_a_convex_combination(seed):
    rng = np.random.default_rng(seed)
    R, I = int(rng.integers(2, 5)), int(rng.integers(3, 7))
    L = rng.integers(0, 30, (R, I)).astype(float)
    g = rng.normal(size=(R, I))
    phi = rng.uniform(size=(I, I))
    value, _ = shock_grid((phi + phi.T) / 2, L, g)
    for r in range(R):
        for i in range(I):
            if np.isfinite(value[r, i]):
                others = np.delete(g[r], i)
                assert others.min() - 1e-12 <= value[r, i] <= others.max() + 1e-12
