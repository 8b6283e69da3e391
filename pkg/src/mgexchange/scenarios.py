"""Monte Carlo scenario fans and fast-forward scenario reduction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .aggregate import FleetSpec, build_profile, is_admissible
from .stochastic_models import (DrivingPatternParams, EVItinerary, SamplingError,
                                TurbineParams, sample_itinerary, sample_wind_series,
                                wind_power)

log = logging.getLogger(__name__)

MAX_FLEET_REDRAWS = 1000


@dataclass
class Scenario:
    id: int
    wind: np.ndarray              # kW, shape (microgrids, horizon)
    fleet: list                   # one list of EVItinerary per microgrid
    probability: float

    def __post_init__(self):
        self.wind = np.asarray(self.wind, dtype=float)
        if self.wind.ndim != 2 or self.wind.shape[0] != len(self.fleet):
            raise ValueError("wind must be (microgrids, horizon) and match the fleet list")
        if np.any(self.wind < 0):
            raise ValueError("wind power must be nonnegative")
        if self.probability < 0:
            raise ValueError("probability must be nonnegative")

    @property
    def microgrids(self):
        return self.wind.shape[0]

    def profiles(self, spec: FleetSpec, literal_lower_bound=False):
        T = self.wind.shape[1]
        return [build_profile(f, spec, T, literal_lower_bound) for f in self.fleet]

    def features(self, spec: FleetSpec):
        parts = [self.wind.ravel()]
        parts += [p.features() for p in self.profiles(spec)]
        return np.concatenate(parts)


@dataclass
class ScenarioSet:
    scenarios: list
    horizon: int = 24
    step_hours: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("empty scenario set")
        total = sum(s.probability for s in self.scenarios)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")
        shapes = {s.wind.shape for s in self.scenarios}
        if len(shapes) != 1 or next(iter(shapes))[1] != self.horizon:
            raise ValueError("scenarios must share microgrid count and horizon")

    def __len__(self):
        return len(self.scenarios)

    @property
    def probabilities(self):
        return np.array([s.probability for s in self.scenarios])

    @property
    def microgrids(self):
        return self.scenarios[0].microgrids

    def most_probable(self):
        p = self.probabilities
        return self.scenarios[int(np.argmax(p))]

    def to_json(self):
        doc = {
            "horizon": self.horizon,
            "step_hours": self.step_hours,
            "scenarios": [{
                "id": s.id,
                "probability": s.probability,
                "wind": s.wind.tolist(),
                "fleet": [[ev.to_dict() for ev in mg] for mg in s.fleet],
            } for s in self.scenarios],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        scen = [Scenario(id=int(d["id"]), wind=np.array(d["wind"], dtype=float),
                         fleet=[[EVItinerary.from_dict(e) for e in mg] for mg in d["fleet"]],
                         probability=float(d["probability"]))
                for d in doc["scenarios"]]
        return cls(scen, int(doc["horizon"]), float(doc["step_hours"]))


@dataclass
class ScenarioModels:
    """Everything needed to draw one scenario."""

    forecast_speed: np.ndarray            # m/s per step, shared by all turbines
    ev_counts: tuple = (100,) * 5
    driving: DrivingPatternParams = field(default_factory=DrivingPatternParams)
    turbine: TurbineParams = field(default_factory=TurbineParams)
    fleet_spec: FleetSpec = field(default_factory=FleetSpec)
    sigma_pct: float = 0.10
    start_hour: float = 12.0
    step_hours: float = 1.0
    literal_lower_bound: bool = False

    @property
    def horizon(self):
        return len(self.forecast_speed)

    @property
    def forecast_power(self):
        return wind_power(np.asarray(self.forecast_speed, dtype=float), self.turbine)


def _draw_fleet(rng, models: ScenarioModels, count):
    T = models.horizon
    for attempt in range(MAX_FLEET_REDRAWS):
        fleet = [sample_itinerary(rng, models.driving, T, models.start_hour, models.step_hours)
                 for _ in range(count)]
        prof = build_profile(fleet, models.fleet_spec, T, models.literal_lower_bound)
        if is_admissible(prof, models.step_hours):
            return fleet, attempt
    raise SamplingError(f"no admissible fleet after {MAX_FLEET_REDRAWS} redraws")


def generate(rng, models: ScenarioModels, n, fleet_rng=None):
    """Draw ``n`` equiprobable scenarios.

    Wind noise comes from ``rng`` and itineraries from ``fleet_rng`` (defaults
    to ``rng``).  Fleets whose aggregate floor is unreachable are redrawn; the
    number of redraws is stored in ``meta["rejected_fleets"]``.
    """
    if n < 1:
        raise ValueError("need at least one scenario")
    fleet_rng = rng if fleet_rng is None else fleet_rng
    f = models.forecast_power
    out, rejected = [], 0
    for s in range(n):
        wind = np.stack([sample_wind_series(rng, f, models.sigma_pct, models.turbine)
                         for _ in models.ev_counts])
        fleet = []
        for c in models.ev_counts:
            mg, nrej = _draw_fleet(fleet_rng, models, c)
            rejected += nrej
            fleet.append(mg)
        out.append(Scenario(id=s, wind=wind, fleet=fleet, probability=1.0 / n))
    if rejected:
        log.info("redrew %d inadmissible fleets", rejected)
    # exact uniform weights summing to one
    return ScenarioSet(out, models.horizon, models.step_hours, {"rejected_fleets": rejected})


# -- distances and reduction ----------------------------------------------

def feature_matrix(sset: ScenarioSet, spec: FleetSpec | None = None):
    spec = spec or FleetSpec()
    return np.stack([s.features(spec) for s in sset.scenarios])


def feature_scale(F):
    """Population std per feature; constant features get scale 1 (they never differ)."""
    sd = F.std(axis=0)
    return np.where(sd > 0, sd, 1.0)


def scenario_distance(a: Scenario, b: Scenario, scale=None, spec: FleetSpec | None = None):
    """Euclidean distance between standardised feature vectors."""
    spec = spec or FleetSpec()
    if a.wind.shape != b.wind.shape:
        raise ValueError("scenarios differ in microgrid count or horizon")
    fa, fb = a.features(spec), b.features(spec)
    if scale is None:
        scale = feature_scale(np.stack([fa, fb]))
    return float(np.linalg.norm((fa - fb) / scale))


def distance_matrix(sset: ScenarioSet, spec: FleetSpec | None = None, features=None):
    F = feature_matrix(sset, spec) if features is None else np.asarray(features, dtype=float)
    Z = F / feature_scale(F)
    return cdist(Z, Z)


def reduction_objective(D, prob, kept):
    """Probability-weighted distance of every deleted scenario to its nearest kept one."""
    kept = list(kept)
    mask = np.ones(len(prob), dtype=bool)
    mask[kept] = False
    if not mask.any():
        return 0.0
    return float(prob[mask] @ D[np.ix_(mask, kept)].min(axis=1))


def fast_forward_select(D, prob, k):
    """Greedy forward selection; returns kept indices in selection order."""
    n = len(prob)
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in [1, {n}]")
    kept = []
    best_d = np.full(n, np.inf)         # distance to the nearest kept scenario
    remaining = np.ones(n, dtype=bool)
    for _ in range(k):
        cand = np.flatnonzero(remaining)
        # objective if candidate c joins: sum over s not kept, s != c
        trial = np.minimum(best_d[None, :], D[cand, :])
        trial[np.arange(cand.size), cand] = 0.0
        w = np.where(remaining, prob, 0.0)
        obj = trial @ w
        c = int(cand[np.argmin(obj)])   # argmin returns the lowest index on ties
        kept.append(c)
        remaining[c] = False
        best_d = np.minimum(best_d, D[c])
    return kept


def redistribute(D, prob, kept):
    """New probabilities: each deleted scenario's mass goes to its nearest kept one."""
    kept_sorted = sorted(kept)
    new = {c: float(prob[c]) for c in kept_sorted}
    for s in range(len(prob)):
        if s in new:
            continue
        d = D[s, kept_sorted]
        new[kept_sorted[int(np.argmin(d))]] += float(prob[s])
    return new


def fast_forward_reduce(sset: ScenarioSet, k, spec: FleetSpec | None = None, D=None):
    """Keep ``k`` representative scenarios and redistribute the mass of the rest."""
    if D is None:
        D = distance_matrix(sset, spec)
    prob = sset.probabilities
    kept = fast_forward_select(D, prob, k)
    new = redistribute(D, prob, kept)
    total = sum(new.values())
    scen = [replace(sset.scenarios[c], probability=new[c] / total) for c in sorted(kept)]
    meta = dict(sset.meta, reduced_from=len(sset), objective=reduction_objective(D, prob, kept))
    return ScenarioSet(scen, sset.horizon, sset.step_hours, meta)
