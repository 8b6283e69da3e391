import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.distance import cdist

from mgexchange.aggregate import FleetSpec
from mgexchange.config import load_config
from mgexchange.pipeline import scenario_models
from mgexchange.scenarios import (Scenario, ScenarioSet, distance_matrix, fast_forward_reduce,
                                  fast_forward_select, feature_matrix, generate, redistribute,
                                  reduction_objective, scenario_distance)
from mgexchange.stochastic_models import EVItinerary
from oracles import best_subset, reduction_cost


@pytest.fixture(scope="module")
def models():
    cfg = load_config(None, profile="desk", system={"ev_counts": 6})
    return scenario_models(cfg)


@pytest.fixture(scope="module")
def fan(models):
    return generate(np.random.default_rng(4), models, 12, fleet_rng=np.random.default_rng(5))


def test_generate_shapes_and_weights(fan, models):
    assert len(fan) == 12
    assert np.allclose(fan.probabilities, 1 / 12)
    for s in fan.scenarios:
        assert s.wind.shape == (5, 24)
        assert all(len(mg) == 6 for mg in s.fleet)
        assert s.wind.min() >= 0 and s.wind.max() <= models.turbine.p_r


def test_generate_is_deterministic(models):
    a = generate(np.random.default_rng(7), models, 3, np.random.default_rng(8))
    b = generate(np.random.default_rng(7), models, 3, np.random.default_rng(8))
    assert a.to_json() == b.to_json()


def test_wind_and_fleet_streams_are_independent(models):
    a = generate(np.random.default_rng(7), models, 3, np.random.default_rng(8))
    b = generate(np.random.default_rng(7), models, 3, np.random.default_rng(99))
    assert all(np.array_equal(x.wind, y.wind) for x, y in zip(a.scenarios, b.scenarios))
    assert a.scenarios[0].fleet != b.scenarios[0].fleet


def test_json_round_trip(fan):
    back = ScenarioSet.from_json(fan.to_json())
    assert back.to_json() == fan.to_json()
    assert np.array_equal(back.scenarios[3].wind, fan.scenarios[3].wind)
    assert back.scenarios[3].fleet == fan.scenarios[3].fleet


def test_distance_matrix_properties(fan):
    D = distance_matrix(fan)
    assert np.allclose(D, D.T) and np.all(np.diag(D) == 0) and np.all(D >= 0)
    F = feature_matrix(fan)
    sd = F.std(axis=0)
    Z = F / np.where(sd > 0, sd, 1.0)
    assert np.allclose(D, cdist(Z, Z))


def test_pairwise_distance_zero_for_identical():
    fleet = [[EVItinerary(t_dep=5, t_arr=1, trips=(10.0,), soc_ini=0.3)]]
    a = Scenario(0, np.ones((1, 8)), fleet, 0.5)
    b = Scenario(1, np.ones((1, 8)), fleet, 0.5)
    assert scenario_distance(a, b) == 0.0
    c = Scenario(2, np.ones((1, 6)), fleet, 0.5)
    with pytest.raises(ValueError):
        scenario_distance(a, c)


def _random_metric(rng, n, dim=3):
    X = rng.normal(size=(n, dim))
    return cdist(X, X)


@given(st.integers(0, 10_000), st.integers(3, 8))
def test_reduction_objective_matches_oracle(seed, n):
    rng = np.random.default_rng(seed)
    D = _random_metric(rng, n)
    prob = rng.dirichlet(np.ones(n))
    kept = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
    assert reduction_objective(D, prob, kept) == pytest.approx(reduction_cost(D, prob, kept))


@given(st.integers(0, 10_000), st.integers(2, 8))
def test_first_pick_is_exact_and_greedy_bounds_optimum(seed, n):
    rng = np.random.default_rng(seed)
    D = _random_metric(rng, n)
    prob = rng.dirichlet(np.ones(n))
    best1, _ = best_subset(D, prob, 1)
    assert reduction_objective(D, prob, fast_forward_select(D, prob, 1)) == pytest.approx(best1)
    k = int(rng.integers(1, n + 1))
    best, _ = best_subset(D, prob, k)
    assert reduction_objective(D, prob, fast_forward_select(D, prob, k)) >= best - 1e-12


def test_greedy_frozen_small_case():
    # four points on a line at 0, 1, 5, 6 with unequal weights
    x = np.array([[0.0], [1.0], [5.0], [6.0]])
    D = cdist(x, x)
    prob = np.array([0.1, 0.4, 0.3, 0.2])
    kept = fast_forward_select(D, prob, 2)
    # first pick ties at 2.3 between 1 and 2; the lower index wins
    assert kept == [1, 2]
    assert reduction_objective(D, prob, kept) == pytest.approx(0.3)
    assert best_subset(D, prob, 2) == (pytest.approx(0.3), {1, 2})
    new = redistribute(D, prob, kept)
    assert new == pytest.approx({1: 0.5, 2: 0.5})


@given(st.integers(0, 10_000))
def test_objective_nonincreasing_in_k(seed):
    rng = np.random.default_rng(seed)
    n = 9
    D = _random_metric(rng, n)
    prob = rng.dirichlet(np.ones(n))
    objs = [reduction_objective(D, prob, fast_forward_select(D, prob, k)) for k in range(1, n + 1)]
    assert all(a >= b - 1e-12 for a, b in zip(objs, objs[1:]))
    assert objs[-1] == 0.0


def test_reduce_keeps_mass_and_identity(fan):
    red = fast_forward_reduce(fan, 4)
    assert len(red) == 4
    assert red.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    assert red.meta["reduced_from"] == 12
    same = fast_forward_reduce(fan, 12)
    assert [s.id for s in same.scenarios] == list(range(12))
    assert np.allclose(same.probabilities, fan.probabilities)
    assert same.meta["objective"] == 0.0


def test_reduced_probabilities_follow_nearest_kept(fan):
    D = distance_matrix(fan)
    prob = fan.probabilities
    red = fast_forward_reduce(fan, 3, D=D)
    kept = [s.id for s in red.scenarios]
    expect = {c: prob[c] for c in kept}
    for s in range(len(prob)):
        if s not in kept:
            expect[min(kept, key=lambda c: (D[s, c], c))] += prob[s]
    assert [expect[c] for c in kept] == pytest.approx(red.probabilities.tolist())


def test_scenario_validation():
    fleet = [[]]
    with pytest.raises(ValueError):
        Scenario(0, -np.ones((1, 4)), fleet, 1.0)
    with pytest.raises(ValueError):
        Scenario(0, np.ones((2, 4)), fleet, 1.0)
    with pytest.raises(ValueError):
        ScenarioSet([Scenario(0, np.ones((1, 4)), fleet, 0.7)], horizon=4)
    with pytest.raises(ValueError):
        ScenarioSet([], horizon=4)
    with pytest.raises(ValueError):
        fast_forward_select(np.zeros((2, 2)), np.array([0.5, 0.5]), 3)


def test_features_depend_on_fleet_spec():
    fleet = [[EVItinerary(t_dep=5, t_arr=1, trips=(10.0,), soc_ini=0.3)]]
    s = Scenario(0, np.ones((1, 8)), fleet, 1.0)
    assert not np.array_equal(s.features(FleetSpec()), s.features(FleetSpec(E=40.0)))
