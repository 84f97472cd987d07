import numpy as np
import pytest

import oracles
from ntumatch.counterfactual import (PriorityPolicy, apply_policy, block_indices, simulate_counterfactual,
                                     sorting_index, welfare_change)
from ntumatch.dgp import DgpConfig, simulate_market
from ntumatch.errors import InvalidInput, SchemaError
from ntumatch.market import LatentUtilities, Market, SchoolType, audit_stability, deferred_acceptance


def test_policy_two_students():
    scores = np.array([[0.9, 0.1]])
    out = apply_policy(scores, [False, True], [True])
    assert out[0, 1] > out[0, 0]


def test_policy_neutral_classes():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(3, 20))
    for flags in (np.zeros(20, bool), np.ones(20, bool)):
        out = apply_policy(s, flags, [True, True, True])
        assert all(np.array_equal(np.argsort(-out[c]), np.argsort(-s[c])) for c in range(3))
    assert np.array_equal(apply_policy(s, rng.random(20) < 0.5, [False] * 3), s)


def test_policy_is_lexicographic():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(1, 30))
    flags = rng.random(30) < 0.4
    out = apply_policy(s, flags, [True])[0]
    order = np.argsort(-out)
    k = flags.sum()
    assert flags[order[:k]].all() and not flags[order[k:]].any()
    assert np.all(np.diff(s[0, order[:k]]) < 0) and np.all(np.diff(s[0, order[k:]]) < 0)


def test_policy_scope_and_flag_lookup():
    m = Market(y=np.zeros((2, 3)), w=np.zeros((2, 3)), z=np.zeros((2, 0)), capacities=[1, 1, 1],
               school_types=(SchoolType.PUBLIC, SchoolType.SELECTIVE_A, SchoolType.SELECTIVE_B),
               college_ids=[7, 8, 9], tags={"low_income": [True, False]})
    assert PriorityPolicy("low_income").affected(m).tolist() == [True, True, True]
    assert PriorityPolicy("low_income", ()).affected(m).tolist() == [False, False, False]
    assert PriorityPolicy("low_income", ("selective-b", 7)).affected(m).tolist() == [True, False, True]
    assert PriorityPolicy("low_income").flags(m).tolist() == [True, False]
    with pytest.raises(SchemaError):
        PriorityPolicy("rich").flags(m)


def test_sorting_index_examples():
    assert sorting_index([1, 1, 3, 3, 4], [1, 1, 2, 2, 2]) == pytest.approx(oracles.FROZEN["sorting_11_334"],
                                                                            abs=1e-12)
    assert sorting_index([1, 2, 1, 2], [1, 1, 2, 2]) == 0.0
    assert sorting_index([5, 5, 7, 7], [1, 1, 2, 2]) == 1.0
    with pytest.warns(RuntimeWarning):
        assert np.isnan(sorting_index([2, 2, 2], [1, 2, 2]))
    with pytest.raises(InvalidInput):
        sorting_index([1, 2], [1, 1])


def test_sorting_index_r2_and_affine_invariance():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=100)
        g = rng.integers(0, 6, 100)
        assert sorting_index(x, g) == pytest.approx(oracles.r_squared(x, g), abs=1e-10)
        assert sorting_index(3 * x - 7, g) == pytest.approx(sorting_index(x, g), abs=1e-12)


def test_welfare_examples():
    u = np.array([[0.0, -0.173, 0.0], [0.0, 1.0, 2.0]])
    # student 0 avoids a change worth -0.173 utils, i.e. gains 1 km of travel
    km = welfare_change(u, np.array([0, 1]), np.array([1, 1]), -0.173)
    assert km[0] == pytest.approx(oracles.FROZEN["welfare_km"], abs=1e-12)
    assert km[1] == 0.0
    with pytest.raises(InvalidInput):
        welfare_change(u, [0, 0], [0, 0], 0.0)


def test_block_indices():
    idx = block_indices(30_000, 15, 100)
    assert idx.size == 1500 and len(np.unique(idx)) == 1500
    assert idx[0] == 0 and idx[-1] == 29_999
    starts = idx[::100]
    assert np.ptp(np.diff(starts)) <= 1
    with pytest.raises(InvalidInput):
        block_indices(1000, 15, 100)


@pytest.fixture(scope="module")
def cf_market():
    sim = simulate_market(DgpConfig(n_students=300, capacities=(80, 70, 80), seed=6))
    rng = np.random.default_rng(9)
    m = sim.market
    m.tags["low_income"] = rng.random(m.n_students) < 0.4
    draws = np.tile(sim.truth, (20, 1)) + 0.01 * rng.normal(size=(20, 19))
    return sim, draws


def test_empty_scope_and_universal_flag_reproduce_baseline(cf_market):
    sim, draws = cf_market
    rep = simulate_counterfactual(sim.market, sim.model, draws, PriorityPolicy("low_income", ()), "beta_d_1",
                                  {"s": sim.market.z[:, 0]}, n_blocks=4, block_size=5, seed=1)
    assert rep.changed == 0.0
    assert rep.sorting["s"][0] == rep.sorting["s"][1]
    for g in rep.welfare.values():
        assert g.mean_km == 0.0 and g.indifferent == 1.0
    m = sim.market
    m.tags["everyone"] = np.ones(m.n_students, dtype=bool)
    rep = simulate_counterfactual(m, sim.model, draws, PriorityPolicy("everyone"), "beta_d_1",
                                  n_blocks=2, block_size=5)
    assert rep.changed == 0.0


def test_counterfactual_report_invariants(cf_market, tmp_path):
    sim, draws = cf_market
    rep = simulate_counterfactual(sim.market, sim.model, draws, PriorityPolicy("low_income"), "beta_d_1",
                                  {"s": sim.market.z[:, 0]}, n_blocks=4, block_size=5, seed=2)
    assert rep.n_draws == 20 and rep.changed > 0
    for g in rep.welfare.values():
        assert g.winners + g.losers + g.indifferent == pytest.approx(1, abs=1e-9)
    for cats in rep.enrollment.values():
        assert sum(b for b, _ in cats.values()) == pytest.approx(1, abs=1e-9)
        assert sum(c for _, c in cats.values()) == pytest.approx(1, abs=1e-9)
    # prioritised students gain on average
    assert rep.welfare["flagged"].mean_km > 0 > rep.welfare["others"].mean_km
    rep.to_csv(tmp_path / "cf.csv")
    assert (tmp_path / "cf.csv").read_text().startswith("section,statistic,group")
    with pytest.raises(InvalidInput):
        simulate_counterfactual(sim.market, sim.model, draws, PriorityPolicy("low_income"), "nope")


def test_policy_matching_is_stable_under_policy_order(cf_market):
    sim, _ = cf_market
    m = sim.market
    rng = np.random.default_rng(3)
    lu = sim.model.draw_utilities(sim.truth, rng, m)
    flags = m.tags["low_income"]
    scores = apply_policy(lu.college, flags, [True, True, True])
    cf = deferred_acceptance(m, lu, scores)
    assert audit_stability(m, lu, cf, scores=scores).stable
    assert not audit_stability(m, lu, cf).stable  # the original order is blocked


def test_affected_rows_keep_others():
    m = Market(y=np.zeros((3, 2)), w=np.zeros((3, 2)), z=np.zeros((3, 0)), capacities=[1, 1])
    lu = LatentUtilities(np.array([[0, 1, 0.5]] * 3), np.array([[3.0, 2.0, 1.0], [3.0, 2.0, 1.0]]))
    sc = apply_policy(lu.college, [False, False, True], [True, False])
    out = deferred_acceptance(m, lu, sc)
    assert out.assignment.tolist() == [2, 0, 1]
