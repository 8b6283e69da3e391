"""Run configuration, shipped system data and seeded random streams.

A config is a YAML mapping with nested sections.  Every omitted field takes
the full-scale default; ``profile: desk`` switches the scale defaults to the
small CI profile before the file's own values are applied.

    seed: 0
    profile: full | desk
    strategy: centralized | decentralized | uncoordinated | compare
    output: out
    scenarios: {generate: 2000, keep: 100, sigma_pct: 0.10}
    system:   {loads, tou, wind_speed, ev_counts, p_ex_max, rho, start_hour, step_hours}
    fleet:    {E, p_ev_max, soc_min, k_drive, literal_lower_bound}
    turbine:  {v_ci, v_r, v_co, p_r}
    driving:  {v, window_size, arrival_mu, arrival_sigma, beta, d0, alpha, trip_count_pmf}
    allocation: {kappa, c_b, c_l, scenarios, on_unsplittable, node_limit, backend, polish, presolve}
    solver:   {lp}

``system.loads`` / ``system.wind_speed`` are CSV paths (absolute or relative to
the config file); ``system.tou`` is either a CSV path or a list of
``[start_hour, end_hour, price]`` periods.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .aggregate import FleetSpec
from .stochastic_models import DrivingPatternParams, TurbineParams

STRATEGIES = ("centralized", "decentralized", "uncoordinated", "compare")
STREAMS = ("scenario", "wind", "fleet")

PROFILES = {
    "full": {"generate": 2000, "keep": 100, "ev_count": 100},
    "desk": {"generate": 200, "keep": 10, "ev_count": 20},
}


class ConfigError(ValueError):
    """Schema violation; the message names the offending field."""


def data_path(name):
    return resources.files("mgexchange") / "data" / name


# -- system data -----------------------------------------------------------

def step_of_label(hour, start_hour=12, step_hours=1.0):
    """Horizon step whose interval ends at clock ``hour`` (24 and 0 are midnight)."""
    off = (hour - start_hour) % 24 or 24
    return int(round(off / step_hours)) - 1


def read_hourly_csv(path, start_hour=12, step_hours=1.0):
    """Rows keyed by ending clock hour -> (header, array (T, columns)) in step order."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    head, body = rows[0], [r for r in rows[1:] if r]
    T = int(round(24 / step_hours))
    # hourly files feed sub-hourly steps by holding each hour's value
    per_row = step_hours if len(body) == T else 1.0
    n = int(round(24 / per_row))
    out = np.full((n, len(head) - 1), np.nan)
    for r in body:
        try:
            t = step_of_label(float(r[0]), start_hour, per_row)
            out[t] = [float(x) for x in r[1:]]
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{path}: bad row {r}: {exc}") from None
    if np.isnan(out).any():
        raise ConfigError(f"{path}: need one row per hour of the day")
    if n != T:
        if abs(1.0 / step_hours - round(1.0 / step_hours)) > 1e-9:
            raise ConfigError(f"{path}: hourly data needs a step that divides one hour")
        out = np.repeat(out, int(round(1.0 / step_hours)), axis=0)
    return head[1:], out


def load_loads(path, start_hour=12, step_hours=1.0):
    """(microgrids, T) kW."""
    _, a = read_hourly_csv(path, start_hour, step_hours)
    if np.any(a < 0):
        raise ConfigError(f"{path}: loads must be nonnegative")
    return a.T.copy()


def load_wind_speed(path, start_hour=12, step_hours=1.0):
    _, a = read_hourly_csv(path, start_hour, step_hours)
    if np.any(a[:, 0] < 0):
        raise ConfigError(f"{path}: wind speeds must be nonnegative")
    return a[:, 0].copy()


def read_tou_periods(path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        try:
            return [(float(d["period_start"]), float(d["period_end"]), float(d["price"])) for d in r]
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: bad TOU table: {exc}") from None


def expand_tou(periods, start_hour=12, step_hours=1.0):
    """Per-step prices from clock-hour periods; a step takes the price at its start."""
    T = int(round(24 / step_hours))
    out = np.full(T, np.nan)
    for t in range(T):
        h = (start_hour + t * step_hours) % 24
        for a, b, price in periods:
            if a <= h < b:
                out[t] = price
                break
    if np.isnan(out).any():
        raise ConfigError("TOU periods must cover the whole day")
    if np.any(out <= 0):
        raise ConfigError("TOU prices must be positive")
    return out


# -- random streams --------------------------------------------------------

def streams(seed):
    """Independent generators for the named sub-streams of one seed."""
    root = np.random.SeedSequence(int(seed))
    kids = root.spawn(len(STREAMS))
    return {name: np.random.default_rng(k) for name, k in zip(STREAMS, kids)}


# -- the config itself ------------------------------------------------------

@dataclass
class AllocationConfig:
    kappa: float = 1.0
    c_b: float = 78_000.0
    c_l: float = 3_000.0
    scenarios: str = "most_probable"      # or "all"
    on_unsplittable: str = "realizable"   # or "error"
    node_limit: int = 20_000
    backend: str = "highs"
    polish: bool = True                   # split a least-movement optimal P^B
    presolve: bool = False                # HiGHS presolve: faster, occasionally wrong


@dataclass
class RunConfig:
    seed: int = 0
    profile: str = "full"
    strategy: str = "compare"
    output: Path = Path("out")
    n_generate: int = 2000
    n_keep: int = 100
    sigma_pct: float = 0.10
    loads: np.ndarray = None
    tou: np.ndarray = None
    wind_speed: np.ndarray = None
    ev_counts: tuple = (100,) * 5
    p_ex_max: float = 10_000.0
    rho: float = 1.0
    start_hour: float = 12.0
    step_hours: float = 1.0
    fleet: FleetSpec = field(default_factory=FleetSpec)
    literal_lower_bound: bool = False
    turbine: TurbineParams = field(default_factory=TurbineParams)
    driving: DrivingPatternParams = field(default_factory=DrivingPatternParams)
    allocation: AllocationConfig = field(default_factory=AllocationConfig)
    lp_backend: str = "highs"

    @property
    def horizon(self):
        return int(round(24 / self.step_hours))

    def describe(self):
        """Plain dict of the resolved settings (arrays as lists)."""
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.astype(float).tolist()
            if dataclasses.is_dataclass(v):
                return {k: conv(x) for k, x in dataclasses.asdict(v).items()}
            if isinstance(v, tuple):
                return [conv(x) for x in v]
            if isinstance(v, Path):
                return str(v)
            return v
        return {f.name: conv(getattr(self, f.name)) for f in dataclasses.fields(self)}


def _section(doc, key):
    v = doc.get(key) or {}
    if not isinstance(v, dict):
        raise ConfigError(f"{key}: expected a mapping")
    return v


def _build(cls, values, where):
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(values) - names
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")
    try:
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _num(d, key, where, default, kind=float, lo=None, strict=False):
    v = d.get(key, default)
    try:
        v = kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}") from None
    if lo is not None and (v < lo or (strict and v == lo)):
        raise ConfigError(f"{where}.{key}: must be {'>' if strict else '>='} {lo}, got {v}")
    return v


def _path(v, base, where):
    p = Path(v)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise ConfigError(f"{where}: file not found: {p}")
    return p


def config_from_dict(doc, base=Path(".")):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    known = {"seed", "profile", "strategy", "output", "scenarios", "system", "fleet",
             "turbine", "driving", "allocation", "solver"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown top-level field(s) {sorted(extra)}")
    profile = doc.get("profile", "full")
    if profile not in PROFILES:
        raise ConfigError(f"profile: expected one of {sorted(PROFILES)}, got {profile!r}")
    scale = PROFILES[profile]
    strategy = doc.get("strategy", "compare")
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy: expected one of {list(STRATEGIES)}, got {strategy!r}")
    seed = _num(doc, "seed", "config", 0, int, lo=0)

    sc = _section(doc, "scenarios")
    n_gen = _num(sc, "generate", "scenarios", scale["generate"], int, lo=1)
    n_keep = _num(sc, "keep", "scenarios", scale["keep"], int, lo=1)
    if n_keep > n_gen:
        raise ConfigError(f"scenarios.keep ({n_keep}) exceeds scenarios.generate ({n_gen})")
    sigma = _num(sc, "sigma_pct", "scenarios", 0.10, lo=0)

    sy = _section(doc, "system")
    step = _num(sy, "step_hours", "system", 1.0, lo=0, strict=True)
    if abs(24 / step - round(24 / step)) > 1e-9:
        raise ConfigError("system.step_hours must divide 24")
    start = _num(sy, "start_hour", "system", 12.0)
    loads_p = _path(sy["loads"], base, "system.loads") if "loads" in sy else data_path("loads.csv")
    wind_p = (_path(sy["wind_speed"], base, "system.wind_speed") if "wind_speed" in sy
              else data_path("wind_speed.csv"))
    loads = load_loads(loads_p, start, step)
    wind = load_wind_speed(wind_p, start, step)
    tou_v = sy.get("tou")
    if tou_v is None:
        periods = read_tou_periods(data_path("tou.csv"))
    elif isinstance(tou_v, str):
        periods = read_tou_periods(_path(tou_v, base, "system.tou"))
    else:
        try:
            periods = [(float(a), float(b), float(c)) for a, b, c in tou_v]
        except (TypeError, ValueError):
            raise ConfigError("system.tou: expected a path or [start, end, price] triples") from None
    tou = expand_tou(periods, start, step)
    I = loads.shape[0]
    counts = sy.get("ev_counts", [scale["ev_count"]] * I)
    if isinstance(counts, int):
        counts = [counts] * I
    if len(counts) != I or any(int(c) < 0 for c in counts):
        raise ConfigError(f"system.ev_counts: need {I} nonnegative counts")
    p_ex_max = _num(sy, "p_ex_max", "system", 10_000.0, lo=0, strict=True)
    rho = _num(sy, "rho", "system", 1.0, lo=0)

    fl = dict(_section(doc, "fleet"))
    literal = bool(fl.pop("literal_lower_bound", False))
    fleet = _build(FleetSpec, fl, "fleet")
    turbine = _build(TurbineParams, _section(doc, "turbine"), "turbine")
    driving = _build(DrivingPatternParams, _section(doc, "driving"), "driving")
    if np.any(wind > turbine.v_co * 10):
        raise ConfigError("system.wind_speed: implausible wind speeds")

    al = _build(AllocationConfig, _section(doc, "allocation"), "allocation")
    if al.kappa < 1:
        raise ConfigError("allocation.kappa: must be >= 1")
    if al.scenarios not in ("most_probable", "all"):
        raise ConfigError("allocation.scenarios: expected most_probable or all")
    if al.on_unsplittable not in ("realizable", "error"):
        raise ConfigError("allocation.on_unsplittable: expected realizable or error")
    if al.backend not in ("highs", "bnb"):
        raise ConfigError("allocation.backend: expected highs or bnb")
    if al.c_b < 0 or al.c_l <= 0:
        raise ConfigError("allocation: need c_b >= 0 and c_l > 0")
    for flag in ("polish", "presolve"):
        if not isinstance(getattr(al, flag), bool):
            raise ConfigError(f"allocation.{flag}: expected true or false")
    so = _section(doc, "solver")
    lp_backend = so.get("lp", "highs")
    if lp_backend not in ("highs", "simplex"):
        raise ConfigError("solver.lp: expected highs or simplex")

    return RunConfig(seed=seed, profile=profile, strategy=strategy,
                     output=Path(doc.get("output", "out")), n_generate=n_gen, n_keep=n_keep,
                     sigma_pct=sigma, loads=loads, tou=tou, wind_speed=wind,
                     ev_counts=tuple(int(c) for c in counts), p_ex_max=p_ex_max, rho=rho,
                     start_hour=start, step_hours=step, fleet=fleet,
                     literal_lower_bound=literal, turbine=turbine, driving=driving,
                     allocation=al, lp_backend=lp_backend)


def load_config(path=None, **overrides):
    """Read a YAML config (``None`` means all defaults) and apply top-level overrides."""
    doc = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        base = path.parent
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    doc = dict(doc)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(doc, base)
