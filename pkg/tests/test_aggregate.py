import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgexchange.aggregate import (AggregateBatteryProfile, FleetError, FleetSpec, build_profile,
                                  count_by_recursion, departure_soc, is_admissible,
                                  presence_matrix)
from mgexchange.stage1 import InfeasibleProfile, SystemData, solve_centralized
from mgexchange.stochastic_models import EVItinerary
from oracles import PRESENCE_N, fleet_with_counts

SPEC = FleetSpec()


def hand_fleet():
    # A: steps 0-2, needs SOC 0.3.  B: steps 1-3, leaves at the horizon, needs 0.1.
    a = EVItinerary(t_dep=3, t_arr=0, trips=(0.3 * 6.7 * 33,), soc_ini=0.3)
    b = EVItinerary(t_dep=4, t_arr=1, trips=(0.1 * 6.7 * 33,), soc_ini=0.5)
    return [a, b]


def test_hand_example():
    p = build_profile(hand_fleet(), SPEC, horizon=4)
    assert p.n.tolist() == [1, 2, 2, 1]
    assert np.allclose(p.b_max, [33, 66, 66, 33])
    assert np.allclose(p.p_max, [3, 6, 6, 3]) and np.allclose(p.p_min, -p.p_max)
    assert p.b0 == pytest.approx(9.9)
    assert np.allclose(p.delta_b, [0.0, 16.5, 0.0, -9.9])
    # A leaves after step 2, so its floor there is its departure SOC
    assert np.allclose(p.b_min, [3.3, 6.6, 13.2, 3.3])


def test_literal_floor_double_counts_leavers():
    p = build_profile(hand_fleet(), SPEC, horizon=4, literal_lower_bound=True)
    assert np.allclose(p.b_min, [3.3, 6.6, 16.5, 6.6])


def test_presence_counts_and_bounds():
    fleet = fleet_with_counts(PRESENCE_N)
    assert len(fleet) == 100
    p = build_profile(fleet, SPEC, horizon=24)
    n = np.array(PRESENCE_N)
    assert p.n.tolist() == PRESENCE_N
    assert np.array_equal(p.b_max, 33.0 * n)
    assert np.array_equal(p.p_max, 3.0 * n)
    assert np.array_equal(count_by_recursion(fleet, 24), n)
    assert np.array_equal(presence_matrix(fleet, 24).sum(axis=0), n)


def _lone_grid(profile):
    return SystemData(loads=np.full((1, 24), 500.0), tou=np.full(24, 0.5),
                      wind=np.zeros((1, 1, 24)), profiles=[[profile]], probabilities=[1.0])


def test_literal_floor_makes_emptying_fleet_infeasible():
    fleet = fleet_with_counts(PRESENCE_N)
    ok = build_profile(fleet, SPEC, 24)
    assert solve_centralized(_lone_grid(ok), "highs").p_cap == pytest.approx(500.0)
    lit = build_profile(fleet, SPEC, 24, literal_lower_bound=True)
    with pytest.raises(InfeasibleProfile):
        solve_centralized(_lone_grid(lit), "highs")


@st.composite
def fleets(draw, horizon=12):
    out = []
    for _ in range(draw(st.integers(0, 15))):
        a = draw(st.integers(0, horizon - 1))
        d = draw(st.integers(a + 1, horizon))
        km = draw(st.floats(0.1, 150.0))
        out.append(EVItinerary(t_dep=d, t_arr=a, trips=(km,),
                               soc_ini=draw(st.floats(0.1, 0.5))))
    return out


@given(fleets())
def test_count_recursion_matches_direct_count(fleet):
    p = build_profile(fleet, SPEC, horizon=12)
    assert np.array_equal(p.n, count_by_recursion(fleet, 12))
    assert np.array_equal(p.n, presence_matrix(fleet, 12).sum(axis=0))


@given(fleets())
def test_profile_invariants(fleet):
    p = build_profile(fleet, SPEC, horizon=12)
    assert np.all(p.b_min >= 0) and np.all(p.b_min <= p.b_max + 1e-9)
    assert np.all(p.p_max == -p.p_min)
    # energy brought in minus energy taken away at departure
    total_in = sum(ev.soc_ini for ev in fleet) * SPEC.E
    taken = sum(departure_soc(ev, SPEC) for ev in fleet if ev.t_dep < 12) * SPEC.E
    assert p.b0 + p.delta_b.sum() == pytest.approx(total_in - taken, abs=1e-9)


@given(st.floats(0.1, 400.0))
def test_departure_soc_range(km):
    ev = EVItinerary(t_dep=5, t_arr=1, trips=(km,), soc_ini=0.2)
    s = departure_soc(ev, SPEC)
    assert SPEC.soc_min <= s <= 1.0
    if SPEC.soc_min * 6.7 * 33 <= km <= 6.7 * 33:
        assert s == pytest.approx(km / (6.7 * 33))


def test_departure_soc_clamps_long_trips(caplog):
    ev = EVItinerary(t_dep=5, t_arr=1, trips=(200.0, 200.0), soc_ini=0.2)
    assert departure_soc(ev, SPEC) == 1.0
    assert "exceeds one full charge" in caplog.text


def test_itinerary_outside_horizon_rejected():
    with pytest.raises(FleetError):
        build_profile([EVItinerary(t_dep=30, t_arr=2, trips=(1.0,), soc_ini=0.2)], SPEC, 24)


def test_is_admissible_detects_unreachable_floor():
    p = build_profile(hand_fleet(), SPEC, horizon=4)
    assert is_admissible(p)
    bad = AggregateBatteryProfile(n=np.array([1, 1]), p_max=np.array([3.0, 3.0]),
                                  p_min=np.array([-3.0, -3.0]), b_max=np.array([33.0, 33.0]),
                                  b_min=np.array([3.3, 30.0]), delta_b=np.zeros(2), b0=3.3)
    assert not is_admissible(bad)
    crossed = AggregateBatteryProfile(n=np.array([1]), p_max=np.array([3.0]),
                                      p_min=np.array([-3.0]), b_max=np.array([1.0]),
                                      b_min=np.array([2.0]), delta_b=np.zeros(1), b0=2.0)
    assert not is_admissible(crossed)


def test_to_csv_layout():
    p = build_profile(hand_fleet(), SPEC, horizon=4)
    lines = p.to_csv(start_hour=12).splitlines()
    assert lines[0] == "hour,n,p_max,b_min,b_max,delta_b"
    assert lines[1].startswith("13,1,3.0,")
    assert [ln.split(",")[0] for ln in lines[1:]] == ["13", "14", "15", "16"]
    wrap = build_profile(hand_fleet(), SPEC, horizon=4).to_csv(start_hour=22)
    assert [ln.split(",")[0] for ln in wrap.splitlines()[1:]] == ["23", "24", "1", "2"]


def test_fleet_spec_validation():
    with pytest.raises(ValueError):
        FleetSpec(E=0)
    with pytest.raises(ValueError):
        FleetSpec(soc_min=1.0)
