"""Aggregate-battery view of a microgrid's plugged-in EV fleet."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .stochastic_models import EVItinerary

log = logging.getLogger(__name__)


class FleetError(ValueError):
    """Inconsistent or over-committed fleet."""


@dataclass(frozen=True)
class FleetSpec:
    E: float = 33.0
    p_ev_max: float = 3.0
    soc_min: float = 0.10
    k_drive: float = 6.7

    def __post_init__(self):
        if self.E <= 0 or self.p_ev_max <= 0 or self.k_drive <= 0:
            raise ValueError("E, p_ev_max and k_drive must be positive")
        if not (0.0 <= self.soc_min < 1.0):
            raise ValueError("soc_min must lie in [0, 1)")


@dataclass
class AggregateBatteryProfile:
    """Per-step bounds of the aggregate battery (kW, kWh).

    ``delta_b[t]`` is the stored-energy jump caused by arrivals and departures
    at step t; ``b0`` is the energy of vehicles already plugged in at step 0.
    """

    n: np.ndarray
    p_max: np.ndarray
    p_min: np.ndarray
    b_max: np.ndarray
    b_min: np.ndarray
    delta_b: np.ndarray
    b0: float

    @property
    def horizon(self):
        return int(self.n.size)

    def features(self):
        return np.concatenate([self.n, self.b_max, self.b_min, self.delta_b]).astype(float)

    def to_csv(self, start_hour=12, step_hours=1.0):
        """CSV of the bound series by hour; ``hour`` is the clock hour ending the step."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["hour", "n", "p_max", "b_min", "b_max", "delta_b"])
        for t in range(self.horizon):
            hour = int(round(start_hour + (t + 1) * step_hours)) % 24 or 24
            w.writerow([hour, int(self.n[t]), repr(float(self.p_max[t])),
                        repr(float(self.b_min[t])), repr(float(self.b_max[t])),
                        repr(float(self.delta_b[t]))])
        return buf.getvalue()


def departure_soc(itinerary: EVItinerary, spec: FleetSpec):
    """SOC a vehicle must hold when it leaves: driving need, floored at soc_min, capped at 1."""
    need = sum(itinerary.trips) / (spec.k_drive * spec.E)
    if need > 1.0:
        log.warning("driving need %.1f km exceeds one full charge; clamped to SOC 1",
                    itinerary.distance)
    return min(1.0, max(spec.soc_min, need))


def presence_matrix(fleet, horizon):
    """Boolean (EV, step) matrix of plugged-in states."""
    out = np.zeros((len(fleet), horizon), dtype=bool)
    for j, ev in enumerate(fleet):
        out[j] = ev.present(horizon)
    return out


def build_profile(fleet, spec: FleetSpec, horizon=24, literal_lower_bound=False):
    """Aggregate-battery parameters of one microgrid in one scenario.

    With ``literal_lower_bound`` the energy floor counts a vehicle leaving at
    the next step twice (once at its departure SOC, once at soc_min), which
    makes the stage-1 problem infeasible as soon as a fleet empties.  The
    default counts every plugged-in vehicle once.
    """
    n = np.zeros(horizon, dtype=int)
    delta = np.zeros(horizon)
    dep_need = np.zeros(horizon + 1)   # sum of soc0 of EVs leaving at step t
    dep_count = np.zeros(horizon + 1, dtype=int)
    b0 = 0.0
    for ev in fleet:
        if ev.t_dep > horizon or ev.t_arr >= horizon:
            raise FleetError(f"itinerary {ev} does not fit a {horizon}-step horizon")
        soc0 = departure_soc(ev, spec)
        n[ev.t_arr:ev.t_dep] += 1
        if ev.t_arr == 0:
            b0 += ev.soc_ini * spec.E
        else:
            delta[ev.t_arr] += ev.soc_ini * spec.E
        if ev.t_dep < horizon:
            delta[ev.t_dep] -= soc0 * spec.E
        dep_need[ev.t_dep] += soc0
        dep_count[ev.t_dep] += 1

    nxt = dep_need[1:horizon + 1]
    if literal_lower_bound:
        b_min = (nxt + n * spec.soc_min) * spec.E
    else:
        b_min = (nxt + (n - dep_count[1:horizon + 1]) * spec.soc_min) * spec.E
    b_max = n * spec.E
    p_max = n * spec.p_ev_max
    prof = AggregateBatteryProfile(n=n, p_max=p_max.astype(float), p_min=-p_max.astype(float),
                                   b_max=b_max.astype(float), b_min=b_min, delta_b=delta, b0=b0)
    return prof


def count_by_recursion(fleet, horizon):
    """EV count from arrival/departure events: n(t) = n(t-1) + |arrivals| - |departures|."""
    arr = np.zeros(horizon, dtype=int)
    dep = np.zeros(horizon + 1, dtype=int)
    for ev in fleet:
        arr[ev.t_arr] += 1
        dep[ev.t_dep] += 1
    n = np.zeros(horizon, dtype=int)
    prev = 0
    for t in range(horizon):
        prev = prev + arr[t] - dep[t]
        n[t] = prev
    return n


def is_admissible(profile: AggregateBatteryProfile, step_hours=1.0, tol=1e-9):
    """Energy bounds are ordered and the fleet can reach every floor at full power."""
    if np.any(profile.b_min > profile.b_max + tol):
        return False
    # forward reachability with maximal charging
    hi = profile.b0
    for t in range(profile.horizon):
        hi = min(hi + profile.p_max[t] * step_hours + profile.delta_b[t], profile.b_max[t])
        if hi < profile.b_min[t] - tol:
            return False
    return True
