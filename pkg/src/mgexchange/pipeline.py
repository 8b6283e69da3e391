"""End-to-end orchestration and report emission.

Stages run in order: generate -> reduce -> schedule (centralised, price
response, uncoordinated) -> price -> allocate -> report.  Every writer emits
floats with ``repr`` so files are bit-identical across runs with one seed and
re-emit unchanged after a parse.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregate import FleetError
from .allocation import (AllocationInfeasible, AllocationProblem, allocate_realizable,
                         allocate_with_escalation, state_grid_csv)
from .config import RunConfig, streams
from .pricing import PriceSignal, run_algorithm1, solve_db2, strategy_table
from .scenarios import ScenarioModels, ScenarioSet, fast_forward_reduce, generate
from .stage1 import (InfeasibleProfile, SolverFailure, Stage1Result, SystemData,
                     exchange_stats, least_movement_battery, solve_centralized,
                     uncoordinated_baseline)
from .stochastic_models import SamplingError

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3


class PipelineError(RuntimeError):
    """A stage failure; ``code`` is the CLI exit status."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        if isinstance(cause, (InfeasibleProfile, AllocationInfeasible, FleetError, SamplingError)):
            self.code = EXIT_INFEASIBLE
        else:
            self.code = EXIT_SOLVER


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, typ, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, Exception):
            raise PipelineError(self.name, exc) from exc
        return False


# -- stages ------------------------------------------------------------------

def scenario_models(cfg: RunConfig):
    return ScenarioModels(forecast_speed=cfg.wind_speed, ev_counts=cfg.ev_counts,
                          driving=cfg.driving, turbine=cfg.turbine, fleet_spec=cfg.fleet,
                          sigma_pct=cfg.sigma_pct, start_hour=cfg.start_hour,
                          step_hours=cfg.step_hours, literal_lower_bound=cfg.literal_lower_bound)


def generate_scenarios(cfg: RunConfig):
    rng = streams(cfg.seed)
    with _stage("generate"):
        return generate(rng["wind"], scenario_models(cfg), cfg.n_generate, fleet_rng=rng["fleet"])


def reduce_scenarios(cfg: RunConfig, full: ScenarioSet):
    with _stage("reduce"):
        if cfg.n_keep > len(full):
            raise ValueError(f"cannot keep {cfg.n_keep} of {len(full)} scenarios")
        return fast_forward_reduce(full, cfg.n_keep, cfg.fleet)


def system_data(cfg: RunConfig, sset: ScenarioSet):
    return SystemData(loads=cfg.loads, tou=cfg.tou,
                      wind=np.stack([s.wind for s in sset.scenarios]),
                      profiles=[s.profiles(cfg.fleet, cfg.literal_lower_bound)
                                for s in sset.scenarios],
                      probabilities=sset.probabilities, p_ex_max=cfg.p_ex_max, rho=cfg.rho,
                      step_hours=cfg.step_hours, fleets=[s.fleet for s in sset.scenarios],
                      fleet_spec=cfg.fleet)


@dataclass
class RunResults:
    cfg: RunConfig
    scenarios: ScenarioSet
    data: SystemData
    schedules: dict = field(default_factory=dict)     # strategy -> Stage1Result
    algorithm1: object = None
    table: list | None = None
    allocation: list | None = None


def run_schedules(cfg: RunConfig, sset: ScenarioSet, strategy=None):
    strategy = strategy or cfg.strategy
    data = system_data(cfg, sset)
    res = RunResults(cfg, sset, data)
    if strategy in ("centralized", "decentralized", "compare"):
        with _stage("schedule"):
            res.schedules["centralized"] = solve_centralized(data, backend=cfg.lp_backend)
    if strategy in ("decentralized", "compare"):
        with _stage("price"):
            alg = run_algorithm1(data, backend=cfg.lp_backend,
                                 centralized=res.schedules["centralized"])
            res.algorithm1 = alg
            res.schedules["decentralized"] = alg.decentralized.as_stage1(data, "decentralized")
    if strategy in ("uncoordinated", "compare"):
        with _stage("schedule"):
            res.schedules["uncoordinated"] = uncoordinated_baseline(data)
    if strategy == "compare":
        with _stage("compare"):
            res.table = strategy_table(data, res.algorithm1, backend=cfg.lp_backend)
            tou_run = solve_db2(data, PriceSignal(data.tou, "original"), cfg.lp_backend)
            res.schedules["decentralized_tou"] = tou_run.as_stage1(data, "decentralized_tou")
    return res


def run_allocation(cfg: RunConfig, res: RunResults, source=None):
    """Per-EV split of one strategy's aggregate battery power."""
    source = source or ("decentralized" if cfg.strategy == "decentralized" else "centralized")
    if source not in res.schedules:
        with _stage("schedule"):
            res.schedules["centralized"] = solve_centralized(res.data, backend=cfg.lp_backend)
        source = "centralized"
    sched = res.schedules[source]
    al = cfg.allocation
    p_b = sched.p_b
    if al.polish and sched.lp is not None:
        p_b = least_movement_battery(sched, backend=cfg.lp_backend)
    S, I, _ = res.data.shape
    if al.scenarios == "all":
        which = range(S)
    else:
        which = [int(np.argmax(res.data.probabilities))]
    out = []
    with _stage("allocate"):
        for s in which:
            for i in range(I):
                prob = AllocationProblem(p_b[s, i], res.data.fleets[s][i], cfg.fleet,
                                         cfg.tou, al.kappa, al.c_b, al.c_l, cfg.step_hours)
                kw = {"backend": al.backend, "node_limit": al.node_limit, "presolve": al.presolve}
                if al.on_unsplittable == "realizable":
                    ev, c = allocate_realizable(prob, **kw)
                else:
                    ev, c = allocate_with_escalation(prob, **kw)
                    c["residual"] = np.zeros(prob.horizon)
                    c["residual_abs_sum"] = 0.0
                out.append({"scenario": s, "microgrid": i, "source": source,
                            "schedule": ev, "costs": c})
    res.allocation = out
    return out


# -- writers --------------------------------------------------------------------

def _f(x):
    return repr(float(x))


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json(obj):
    return json.dumps(_plain(obj), indent=1, sort_keys=True) + "\n"


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_plain(v) for v in o.tolist()]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    return o


def hour_label(cfg: RunConfig, t):
    """Clock hour ending step ``t``, used as the row label in every report."""
    h = (cfg.start_hour + (t + 1) * cfg.step_hours) % 24
    return int(h) if float(h).is_integer() and h else (24 if not h else h)


def schedule_csv(cfg: RunConfig, result: Stage1Result):
    S, I, T = result.p_ex.shape
    rows = [[s, i + 1, t, hour_label(cfg, t), _f(result.p_ex[s, i, t]), _f(result.p_b[s, i, t]),
             _f(result.b[s, i, t])] for s in range(S) for i in range(I) for t in range(T)]
    return _csv(["scenario", "microgrid", "step", "hour", "p_ex", "p_b", "b"], rows)


def price_json(cfg: RunConfig, res: RunResults):
    alg = res.algorithm1
    stair = [{"start": a, "end": b, "price": p}
             for a, b, p in alg.final.staircase(cfg.start_hour, cfg.step_hours)]
    return _json({
        "horizon": int(alg.final.values.size),
        "label": "final",
        "values": alg.final.values,
        "original": res.data.tou,
        "updated": alg.updated.values,
        "eps": alg.eps, "W": alg.W, "W_prime": alg.W_prime,
        "theta_sum": alg.duals.theta.sum(axis=0),
        "eta_sum": alg.duals.eta.sum(axis=0),
        "binding_steps": alg.duals.binding_steps(),
        "staircase": stair,
    })


def summarize(res: RunResults):
    cfg = res.cfg
    doc = {"seed": cfg.seed, "profile": cfg.profile, "strategy": cfg.strategy,
           "scenarios": {"generated": int(res.scenarios.meta.get("reduced_from", len(res.scenarios))),
                         "kept": len(res.scenarios),
                         "reduction_objective": res.scenarios.meta.get("objective"),
                         "rejected_fleets": res.scenarios.meta.get("rejected_fleets", 0),
                         "most_probable": int(np.argmax(res.data.probabilities))},
           "strategies": {}}
    for name, r in res.schedules.items():
        st = exchange_stats(r)
        st.update(p_cap=r.p_cap, objective=r.objective)
        doc["strategies"][name] = st
    if "centralized" in res.schedules:
        c = res.schedules["centralized"]
        doc["p_cap"] = c.p_cap
        doc["expected_cost"] = c.expected_cost
    if {"centralized", "uncoordinated"} <= res.schedules.keys():
        a = doc["strategies"]["uncoordinated"]
        b = doc["strategies"]["centralized"]
        doc["coordination"] = {
            "cost_reduction": 1 - b["expected_cost"] / a["expected_cost"],
            "peak_reduction": 1 - b["peak"] / a["peak"],
            "sd_reduction": 1 - b["sd"] / a["sd"] if a["sd"] > 0 else 0.0,
        }
    if res.algorithm1 is not None:
        doc["algorithm1"] = res.algorithm1.report
    if res.allocation:
        doc["allocation"] = [{
            "scenario": a["scenario"], "microgrid": a["microgrid"] + 1, "source": a["source"],
            "evs": int(a["schedule"].p_c.shape[0]),
            **{k: a["costs"][k] for k in ("k_e", "k_w", "k_total", "cycles_total", "kappa",
                                          "status", "gap", "residual_abs_sum")},
        } for a in res.allocation]
    return _json(doc)


def comparison_csv(table):
    rows = [[r["strategy"], _f(r["avg_cost"]), _f(r["avg_peak"]), _f(r["worst_cost"]),
             _f(r["worst_peak"])] for r in table]
    return _csv(["strategy", "avg_cost", "avg_peak", "worst_cost", "worst_peak"], rows)


def allocation_csv(cfg: RunConfig, entries):
    rows = []
    for a in entries:
        ev = a["schedule"]
        st = ev.states
        J, T = ev.p_c.shape
        for j in range(J):
            for t in range(T):
                if np.isnan(ev.soc[j, t]):
                    continue
                rows.append([a["microgrid"] + 1, a["scenario"], j, hour_label(cfg, t),
                             _f(ev.p_c[j, t]), _f(ev.p_d[j, t]), int(st[j, t]), _f(ev.soc[j, t])])
    return _csv(["microgrid", "scenario", "ev_id", "hour", "p_c", "p_d", "state", "soc"], rows)


def costs_json(entries):
    keys = ("k_e", "k_w", "k_total", "cycles_total")
    tot = {k: float(sum(a["costs"][k] for a in entries)) for k in keys}
    tot["microgrids"] = [{"microgrid": a["microgrid"] + 1, "scenario": a["scenario"],
                          **{k: a["costs"][k] for k in keys},
                          "residual": a["costs"]["residual"]} for a in entries]
    return _json(tot)


def plot_series(res: RunResults):
    """Plot-ready CSVs keyed by file name."""
    cfg = res.cfg
    T = res.data.shape[2]
    hours = [hour_label(cfg, t) for t in range(T)]
    tau = res.data.probabilities
    mean = {k: tau @ r.p_ex.sum(axis=1) for k, r in res.schedules.items()}
    out = {}
    if {"centralized", "uncoordinated"} <= mean.keys():
        out["exchange_coordination.csv"] = _csv(
            ["hour", "coordinated", "uncoordinated"],
            [[h, _f(mean["centralized"][t]), _f(mean["uncoordinated"][t])]
             for t, h in enumerate(hours)])
    names = [k for k in ("centralized", "decentralized", "decentralized_tou") if k in mean]
    if len(names) > 1:
        out["exchange_by_strategy.csv"] = _csv(["hour"] + names,
                                          [[h] + [_f(mean[k][t]) for k in names]
                                           for t, h in enumerate(hours)])
        worst = exchange_stats(res.schedules["centralized"])["worst_scenario"]
        out["exchange_worst_case.csv"] = _csv(
            ["hour", "scenario"] + names,
            [[h, worst] + [_f(res.schedules[k].p_ex[worst].sum(axis=0)[t]) for k in names]
             for t, h in enumerate(hours)])
    if {"decentralized", "decentralized_tou"} <= mean.keys():
        pb = {k: tau @ res.schedules[k].p_b.sum(axis=1) for k in ("decentralized", "decentralized_tou")}
        out["battery_power_by_price.csv"] = _csv(
            ["hour", "final_price", "original_tou"],
            [[h, _f(pb["decentralized"][t]), _f(pb["decentralized_tou"][t])]
             for t, h in enumerate(hours)])
    if res.algorithm1 is not None:
        fin = res.algorithm1.final.staircase(cfg.start_hour, cfg.step_hours)
        tou = PriceSignal(res.data.tou).staircase(cfg.start_hour, cfg.step_hours)
        out["price_staircase.csv"] = _csv(["start", "end", "price"],
                                          [[_f(a), _f(b), _f(p)] for a, b, p in fin])
        out["tou_staircase.csv"] = _csv(["start", "end", "price"],
                                        [[_f(a), _f(b), _f(p)] for a, b, p in tou])
    return out


def emit_plot_series(res: RunResults, out: Path):
    files = plot_series(res)
    for name, text in files.items():
        (out / name).write_text(text)
    return sorted(files)


def profiles_csv(cfg: RunConfig, res: RunResults):
    """Aggregate-battery bounds of the most probable scenario, one row per microgrid and hour."""
    s = int(np.argmax(res.data.probabilities))
    rows = []
    for i, p in enumerate(res.data.profiles[s]):
        for t in range(p.horizon):
            rows.append([i + 1, hour_label(cfg, t), int(p.n[t]), _f(p.p_max[t]), _f(p.b_min[t]),
                         _f(p.b_max[t]), _f(p.delta_b[t])])
    return _csv(["microgrid", "hour", "n", "p_max", "b_min", "b_max", "delta_b"], rows)


def write_outputs(res: RunResults, out: Path):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        (out / name).write_text(text)
        written.append(name)

    cfg = res.cfg
    put("config.json", _json(cfg.describe()))
    put("scenarios.json", res.scenarios.to_json() + "\n")
    put("profiles.csv", profiles_csv(cfg, res))
    for name, r in res.schedules.items():
        put(f"schedule_{name}.csv", schedule_csv(cfg, r))
    if res.algorithm1 is not None:
        put("price.json", price_json(cfg, res))
    if res.table is not None:
        put("comparison.csv", comparison_csv(res.table))
    if res.allocation:
        put("allocation.csv", allocation_csv(cfg, res.allocation))
        put("costs.json", costs_json(res.allocation))
        for a in res.allocation:
            put(f"state_grid_mg{a['microgrid'] + 1}_s{a['scenario']}.csv",
                state_grid_csv(a["schedule"]))
    written += emit_plot_series(res, out)
    put("summary.json", summarize(res))
    return sorted(written)


def run_pipeline(cfg: RunConfig, out=None, allocate=True):
    """Full run: every artifact of ``cfg.strategy`` under ``out`` (defaults to cfg.output)."""
    out = Path(out or cfg.output)
    full = generate_scenarios(cfg)
    sset = reduce_scenarios(cfg, full)
    res = run_schedules(cfg, sset)
    if allocate and cfg.strategy != "uncoordinated":
        run_allocation(cfg, res)
    write_outputs(res, out)
    return res


__all__ = ["PipelineError", "RunResults", "run_pipeline", "run_schedules", "run_allocation",
           "write_outputs", "emit_plot_series", "generate_scenarios", "reduce_scenarios",
           "system_data", "EXIT_OK", "EXIT_CONFIG", "EXIT_INFEASIBLE", "EXIT_SOLVER",
           "SolverFailure"]
