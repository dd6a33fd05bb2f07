import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knowflow.errors import DegenerateNormalizationError, EpochViolationError, SingularFitError
from knowflow.flows import EmploymentVector, FlowMatrix, compute_employment, compute_flows
from knowflow.relatedness import (RelatednessMatrix, default_threshold, fit_flow_regression,
                                  maximum_spanning_forest, minmax_scale, normalize_residuals,
                                  pooled_relatedness, relatedness_for_year, trim_network)

from conftest import make_panel, random_panel


# -- oracles ---------------------------------------------------------------

def flows_by_loop(panel, col, year):
    """Per-worker double loop: each mover spreads weight 1 over (old, new) entity pairs."""
    s = panel.spells
    ents = panel.labels(col)
    pos = {e: k for k, e in enumerate(ents)}
    before = s[s["year"] == year - 1].groupby("worker_id", observed=True)[col].agg(lambda v: sorted(set(v)))
    after = s[s["year"] == year].groupby("worker_id", observed=True)[col].agg(lambda v: sorted(set(v)))
    out = np.zeros((len(ents), len(ents)))
    for w in set(before.index) & set(after.index):
        a, b = before[w], after[w]
        for x in a:
            for y in b:
                wt = 1.0 / (len(a) * len(b))
                out[pos[x], pos[y]] += wt
                if x != y:
                    out[pos[y], pos[x]] += wt
    return out


def relatedness_oracle(F, L, L_prev):
    """Normal equations on positive-flow pairs, minimum residual elsewhere, min-max scaling."""
    n = len(L)
    g = np.log(L) - np.log(L_prev)
    rows, ys, pairs = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            pairs.append((i, j))
            if F[i, j] > 0:
                rows.append([1.0, max(g[i], g[j]), max(np.log(L[i]), np.log(L[j]))])
                ys.append(np.log(F[i, j]))
    X, y = np.array(rows), np.array(ys)
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    e = y - X @ beta
    res, k = {}, 0
    for i, j in pairs:
        if F[i, j] > 0:
            res[i, j] = e[k]
            k += 1
        else:
            res[i, j] = e.min()
    lo, hi = min(res.values()), max(res.values())
    out = np.eye(n)
    for (i, j), v in res.items():
        out[i, j] = out[j, i] = (v - lo) / (hi - lo)
    return beta, out


def random_flow_instance(rng, n=6, zero_share=0.2):
    ents = tuple(f"I{k}" for k in range(n))
    F = rng.poisson(rng.uniform(1, 60), size=(n, n)).astype(float)
    F = np.triu(F, 1)
    F[rng.random((n, n)) < zero_share] = 0.0
    F = F + F.T + np.diag(rng.integers(50, 500, n))
    L_prev = rng.integers(50, 2000, n).astype(float)
    L = L_prev * np.exp(rng.normal(0, 0.2, n))
    emp = EmploymentVector("industry", 2010, ents, L, L_prev, np.log(L) - np.log(L_prev))
    return FlowMatrix("industry", 2010, ents, F), emp


def brute_force_max_tree(W):
    n = W.shape[0]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    best, best_w = None, -np.inf
    for combo in itertools.combinations(edges, n - 1):
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                a = parent[a]
            return a
        ok = True
        for i, j in combo:
            ri, rj = find(i), find(j)
            if ri == rj:
                ok = False
                break
            parent[ri] = rj
        if ok:
            w = sum(W[i, j] for i, j in combo)
            if w > best_w:
                best, best_w = set(combo), w
    return best


# -- flows -----------------------------------------------------------------

def test_flows_match_worker_loop():
    rng = np.random.default_rng(5)
    p = random_panel(rng, n_firms=80)
    for kind in ("industry", "occupation"):
        for t in (2005, 2009):
            assert np.allclose(compute_flows(p, kind, t).counts, flows_by_loop(p, kind, t), atol=1e-12)


def test_flows_split_multi_entity_workers():
    p = make_panel([("w", "f1", 2001, "A", "o", "r"), ("w", "f2", 2001, "B", "o", "r"),
                    ("w", "f3", 2002, "C", "o", "r")])
    F = compute_flows(p, "industry", 2002).counts
    ents = p.labels("industry")
    a, b, c = (ents.index(x) for x in "ABC")
    assert F[a, c] == F[c, a] == F[b, c] == 0.5
    assert F.sum() == 2.0  # both directions of both moves


def test_employment_growth_undefined_for_new_entity():
    p = make_panel([("w1", "f", 2001, "A", "o", "r"), ("w1", "f", 2002, "A", "o", "r"),
                    ("w2", "f", 2002, "B", "o", "r")])
    emp = compute_employment(p, "industry", 2002)
    assert emp.L.tolist() == [1.0, 1.0] and emp.L_prev.tolist() == [1.0, 0.0]
    assert emp.g[0] == 0.0 and np.isnan(emp.g[1])


def test_flows_refuse_epoch_boundary():
    p = make_panel([("w", "f", 2005, "A", "o", "r"), ("w", "f", 2006, "A", "o", "r")], epochs=(2006,))
    with pytest.raises(EpochViolationError):
        compute_flows(p, "industry", 2006)


def test_bad_entity_kind():
    p = make_panel([("w", "f", 2005, "A", "o", "r")])
    with pytest.raises(ValueError):
        compute_flows(p, "region", 2006)


# -- relatedness -----------------------------------------------------------

def test_relatedness_matches_normal_equation_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    for _ in range(20):
        flows, emp = random_flow_instance(rng)
        fit = fit_flow_regression(flows, emp)
        m = normalize_residuals(fit)
        beta, expected = relatedness_oracle(flows.counts, emp.L, emp.L_prev)
        assert np.allclose(fit.coefficients, beta, atol=1e-10)
        assert np.max(np.abs(m.values - expected)) < 1e-10
        assert np.array_equal(np.diag(m.values), np.ones(6))
    assert time.perf_counter() - t0 < 1.0


def test_bounds_on_random_instances():
    rng = np.random.default_rng(12)
    fitted = 0
    for _ in range(100):
        try:
            m = normalize_residuals(fit_flow_regression(*random_flow_instance(rng, n=int(rng.integers(4, 9)))))
        except SingularFitError:
            continue  # few positive pairs on 4-node draws can leave a collinear design
        fitted += 1
        assert m.values.min() >= 0.0 and m.values.max() <= 1.0
        assert np.allclose(m.values, m.values.T)
        off = m.values[~np.eye(len(m.entities), dtype=bool)]
        assert off.min() == 0.0 and off.max() == 1.0
    assert fitted >= 90


def test_unfit_pairs_share_the_minimum():
    rng = np.random.default_rng(3)
    flows, emp = random_flow_instance(rng, n=7, zero_share=0.4)
    fit = fit_flow_regression(flows, emp)
    m = normalize_residuals(fit)
    unfit = ~fit.fitted & ~np.eye(7, dtype=bool)
    assert unfit.any()
    assert np.all(m.values[unfit] == 0.0)


def test_too_few_pairs_is_singular():
    ents = ("A", "B", "C")
    F = np.zeros((3, 3))
    F[0, 1] = F[1, 0] = 5
    emp = EmploymentVector("industry", 2010, ents, np.ones(3) * 10, np.ones(3) * 9, np.full(3, np.log(10 / 9)))
    with pytest.raises(SingularFitError):
        fit_flow_regression(FlowMatrix("industry", 2010, ents, F), emp)


def test_minmax_degenerate():
    with pytest.raises(DegenerateNormalizationError):
        minmax_scale([2.0, 2.0, 2.0])
    assert minmax_scale([1.0, 3.0, 2.0]).tolist() == [0.0, 1.0, 0.5]


def test_long_round_trip_and_reindex():
    rng = np.random.default_rng(2)
    m = normalize_residuals(fit_flow_regression(*random_flow_instance(rng)))
    back = RelatednessMatrix.from_long(m.to_long(), "industry", 2010)
    assert back.entities == m.entities and np.array_equal(back.values, m.values)
    r = m.reindex(("I0", "ZZ", "I3"))
    assert r.values[1, 1] == 1.0 and r.values[0, 1] == 0.0
    assert r.values[0, 2] == m.lookup("I0", "I3")


def test_synthetic_relatedness_tracks_planted_order(small_synth):
    from scipy.stats import spearmanr
    panel, truth = small_synth
    m = relatedness_for_year(panel, "industry", truth.config.first_year + 5).reindex(truth.industries)
    iu = np.triu_indices(len(truth.industries), 1)
    assert spearmanr(m.values[iu], truth.phi_true[iu]).statistic > 0.5


def test_pooled_relatedness_is_a_valid_matrix(small_synth):
    panel, truth = small_synth
    years = [truth.config.first_year + k for k in (3, 4, 5)]
    m = pooled_relatedness(panel, "industry", years)
    assert np.allclose(np.diag(m.values), 1.0)
    assert 0.0 <= m.values.min() and m.values.max() <= 1.0


# -- trimmed network -------------------------------------------------------

def test_spanning_tree_matches_brute_force():
    rng = np.random.default_rng(9)
    for n in (3, 4, 5, 6):
        for _ in range(5):
            W = rng.uniform(0.01, 1, (n, n))
            W = np.triu(W, 1) + np.triu(W, 1).T
            assert set(maximum_spanning_forest(W)) == brute_force_max_tree(W)


def test_disconnected_graph_gives_forest():
    W = np.zeros((4, 4))
    W[0, 1] = W[1, 0] = 0.5
    W[2, 3] = W[3, 2] = 0.7
    assert sorted(maximum_spanning_forest(W)) == [(0, 1), (2, 3)]


def test_trim_keeps_tree_plus_heavy_edges():
    rng = np.random.default_rng(4)
    m = normalize_residuals(fit_flow_regression(*random_flow_instance(rng, n=8)))
    net = trim_network(m)
    th = default_threshold(m)
    W = m.values.copy()
    np.fill_diagonal(W, 0)
    idx = {e: k for k, e in enumerate(m.entities)}
    kept = {(idx[a], idx[b]) for a, b, _ in net.edges}
    tree = set(maximum_spanning_forest(W))
    heavy = {(i, j) for i in range(8) for j in range(i + 1, 8) if W[i, j] > th}
    assert kept == tree | heavy
    assert net.n_components == 1 and not net.spanning_forest
    with pytest.raises(ValueError):
        trim_network(m, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 9), st.integers(0, 2 ** 31 - 1))
def test_tree_connects_every_node(n, seed):
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.01, 1, (n, n))
    W = np.triu(W, 1) + np.triu(W, 1).T
    tree = maximum_spanning_forest(W)
    assert len(tree) == n - 1
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a
    for i, j in tree:
        parent[find(i)] = find(j)
    assert len({find(k) for k in range(n)}) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 9), st.integers(0, 2 ** 31 - 1))
def test_relatedness_invariants(n, seed):
    rng = np.random.default_rng(seed)
    flows, emp = random_flow_instance(rng, n=n, zero_share=0.1)
    try:
        m = normalize_residuals(fit_flow_regression(flows, emp))
    except (SingularFitError, DegenerateNormalizationError):
        return
    assert np.all(np.diag(m.values) == 1.0)
    assert np.allclose(m.values, m.values.T)
    assert m.values.min() >= 0.0 and m.values.max() <= 1.0
