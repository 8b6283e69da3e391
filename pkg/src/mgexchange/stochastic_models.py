"""Statistical models for EV driving behaviour and wind generation.

Times of day are clock hours in ``[0, 24)``.  Itineraries are expressed in
horizon steps: step 0 starts at ``start_hour`` (12:00 by default) and the
horizon covers one day.  A vehicle is plugged in for steps
``t_arr <= t < t_dep``; it arrives on the first afternoon/evening and leaves
the next morning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

log = logging.getLogger(__name__)

MAX_REJECTIONS = 10_000


class SamplingError(RuntimeError):
    """Raised when the itinerary sampler cannot find a valid draw."""


def _default_mu():
    # one window per half hour of the morning; later departures come home later
    starts = np.arange(24) * 0.5
    return tuple(float(x) for x in 18.5 + 0.4 * (starts - 6.5))


@dataclass(frozen=True)
class DrivingPatternParams:
    """Driving-pattern model.

    The default departure shape, arrival Gaussians and trip-count pmf are
    synthetic placeholders (the survey fits are not published); the
    trip-distance law uses beta=1.25, d0=1.8 km, alpha=20 km.
    ``arrival_mu``/``arrival_sigma`` hold one entry per departure window;
    windows past the end of the tuple reuse the last entry.
    """

    v: float = 13.0
    window_size: float = 0.5
    arrival_mu: tuple = field(default_factory=_default_mu)
    arrival_sigma: tuple = (2.5,)
    beta: float = 1.25
    d0: float = 1.8
    alpha: float = 20.0
    trip_count_pmf: tuple = (0.4, 0.4, 0.15, 0.05)
    d_max: float = 200.0
    soc_ini_range: tuple = (0.10, 0.50)

    def __post_init__(self):
        if self.v <= 0:
            raise ValueError("chi-square degrees of freedom must be positive")
        if self.window_size <= 0:
            raise ValueError("window_size must be positive")
        if min(self.arrival_sigma) <= 0:
            raise ValueError("arrival_sigma must be positive")
        if len(self.arrival_mu) == 0 or len(self.arrival_sigma) == 0:
            raise ValueError("arrival parameters must be non-empty")
        if self.beta <= 0 or self.d0 <= 0 or self.alpha <= 0 or self.d_max <= 0:
            raise ValueError("trip distance parameters must be positive")
        pmf = np.asarray(self.trip_count_pmf, dtype=float)
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
            raise ValueError("trip_count_pmf must be a probability vector")

    def arrival_params(self, window):
        mu = self.arrival_mu[min(window, len(self.arrival_mu) - 1)]
        sigma = self.arrival_sigma[min(window, len(self.arrival_sigma) - 1)]
        return mu, sigma


@dataclass(frozen=True)
class TurbineParams:
    v_ci: float = 3.0
    v_r: float = 10.0
    v_co: float = 20.0
    p_r: float = 500.0

    def __post_init__(self):
        if not (0 < self.v_ci < self.v_r < self.v_co):
            raise ValueError("need 0 < v_ci < v_r < v_co")
        if self.p_r <= 0:
            raise ValueError("nominal power must be positive")


@dataclass(frozen=True)
class EVItinerary:
    """One vehicle-day.  Plugged in for horizon steps ``t_arr <= t < t_dep``."""

    t_dep: int
    t_arr: int
    trips: tuple
    soc_ini: float

    def __post_init__(self):
        if not (0 <= self.t_arr < self.t_dep):
            raise ValueError(f"need 0 <= t_arr < t_dep, got {self.t_arr}, {self.t_dep}")
        if any(d <= 0 for d in self.trips):
            raise ValueError("trip distances must be positive")
        if not (0.0 <= self.soc_ini <= 1.0):
            raise ValueError("soc_ini must lie in [0, 1]")
        object.__setattr__(self, "trips", tuple(float(d) for d in self.trips))

    def present(self, horizon):
        mask = np.zeros(horizon, dtype=bool)
        mask[self.t_arr:min(self.t_dep, horizon)] = True
        return mask

    @property
    def distance(self):
        return float(sum(self.trips))

    def to_dict(self):
        return {"t_dep": self.t_dep, "t_arr": self.t_arr,
                "trips": list(self.trips), "soc_ini": self.soc_ini}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["t_dep"]), int(d["t_arr"]), tuple(d["trips"]), float(d["soc_ini"]))


# -- densities -------------------------------------------------------------

def departure_density(t_norm, v):
    """Chi-square density of the normalised departure time ``t / window``."""
    if v <= 0:
        raise ValueError("v must be positive")
    t = np.asarray(t_norm, dtype=float)
    if np.any(t < 0):
        raise ValueError("normalised departure time must be nonnegative")
    k = v / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        logpdf = (k - 1.0) * np.log(t) - t / 2.0 - k * math.log(2.0) - gammaln(k)
    out = np.exp(logpdf)
    if k == 1.0:
        out = np.where(t == 0, 0.5, out)
    elif k < 1.0:
        out = np.where(t == 0, np.inf, out)
    return out if out.ndim else float(out)


def arrival_density(t_arr, mu, sigma):
    """Gaussian density of the arrival time given the departure window."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = (np.asarray(t_arr, dtype=float) - mu) / sigma
    out = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi * sigma * sigma)
    return out if out.ndim else float(out)


def trip_distance_kernel(d, params: DrivingPatternParams):
    """Unnormalised truncated power law ``(d0 + d)^-beta exp(-d / alpha)``."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be nonnegative")
    out = (params.d0 + d) ** (-params.beta) * np.exp(-d / params.alpha)
    return out if out.ndim else float(out)


_NORM_CACHE: dict = {}


def _distance_table(params: DrivingPatternParams, points=1000):
    """Tabulated CDF of the trip-distance law on ``[0, d_max]``."""
    key = (params.beta, params.d0, params.alpha, params.d_max, points)
    if key not in _NORM_CACHE:
        grid = np.linspace(0.0, params.d_max, points)
        pdf = trip_distance_kernel(grid, params)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
        from scipy.integrate import quad
        z, _ = quad(trip_distance_kernel, 0.0, params.d_max, args=(params,),
                    limit=200, epsabs=1e-13, epsrel=1e-12)
        _NORM_CACHE[key] = (grid, cdf / cdf[-1], z)
    return _NORM_CACHE[key]


def trip_distance_density(d, params: DrivingPatternParams):
    """Normalised trip-distance density on ``[0, d_max]`` (zero beyond)."""
    _, _, z = _distance_table(params)
    k = trip_distance_kernel(d, params)
    return np.where(np.asarray(d) <= params.d_max, k / z, 0.0) if np.ndim(d) else \
        (k / z if d <= params.d_max else 0.0)


# -- samplers --------------------------------------------------------------

def sample_departure_window(rng, params: DrivingPatternParams):
    """Departure window index ``floor(t_norm)`` with ``t_norm ~ chi2(v)``."""
    return int(math.floor(rng.chisquare(params.v)))


def sample_trip_distance(rng, params: DrivingPatternParams, size=None):
    grid, cdf, _ = _distance_table(params)
    u = rng.random(size)
    return np.interp(u, cdf, grid)


def sample_itinerary(rng, params: DrivingPatternParams, horizon=24, start_hour=12.0,
                     step_hours=1.0):
    """Draw one :class:`EVItinerary`, rejecting draws that do not fit the horizon."""
    day = horizon * step_hours
    counts = np.arange(1, len(params.trip_count_pmf) + 1)
    for _ in range(MAX_REJECTIONS):
        k = sample_departure_window(rng, params)
        dep_clock = k * params.window_size
        mu, sigma = params.arrival_params(k)
        arr_clock = rng.normal(mu, sigma)
        m = int(rng.choice(counts, p=params.trip_count_pmf))
        trips = sample_trip_distance(rng, params, size=m)
        soc = rng.uniform(*params.soc_ini_range)
        dep_off = (dep_clock - start_hour) % 24.0
        arr_off = arr_clock - start_hour
        # departure is the morning after arrival, before the horizon restarts
        if dep_clock >= start_hour or arr_off < 0 or dep_off >= day:
            continue
        t_dep = int(math.floor(dep_off / step_hours + 1e-9))
        t_arr = int(math.floor(arr_off / step_hours + 1e-9))
        if not (0 <= t_arr < t_dep <= horizon) or np.any(trips <= 0):
            continue
        return EVItinerary(t_dep=t_dep, t_arr=t_arr, trips=tuple(trips), soc_ini=float(soc))
    raise SamplingError(f"no valid itinerary after {MAX_REJECTIONS} draws")


def wind_power(v_f, turbine: TurbineParams):
    """Turbine output (kW) for forecast wind speed ``v_f`` (m/s)."""
    v = np.asarray(v_f, dtype=float)
    ramp = (v ** 3 - turbine.v_ci ** 3) / (turbine.v_r ** 3 - turbine.v_ci ** 3) * turbine.p_r
    out = np.where((v < turbine.v_ci) | (v > turbine.v_co), 0.0,
                   np.where(v <= turbine.v_r, ramp, turbine.p_r))
    return out if out.ndim else float(out)


def sample_wind_series(rng, forecast, sigma_pct, turbine: TurbineParams):
    """Gaussian forecast error with std ``sigma_pct * forecast``, clamped to [0, p_r]."""
    f = np.asarray(forecast, dtype=float)
    if np.any(f < 0) or np.any(f > turbine.p_r + 1e-9):
        raise ValueError("forecast must lie in [0, p_r]")
    draw = rng.normal(f, sigma_pct * f) if sigma_pct > 0 else f.copy()
    return np.clip(draw, 0.0, turbine.p_r)
