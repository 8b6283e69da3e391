"""Stage-2 disaggregation of the aggregate battery power across individual EVs.

The allocation minimises charge/discharge cycles.  A vehicle's battery mode
(charging or discharging) persists through idle steps: a cycle is counted
from the starts of a charging mode and the starts of a discharging mode, half
a cycle each, so charging, idling and charging again costs no more than one
long charging block.

MIP columns per (EV, plugged-in step):
  p_c in [0, p], p_d in [-p, 0], u in {0,1}, v in {-1,0}, soc in [soc_min, 1],
  m_c, m_d in {0,1} (battery mode), u_z in [0,1], v_z in [-1,0] (mode starts).
Only the mode columns are declared integral.  Given the modes, u = m_c and
v = -m_d are always feasible and never worse, and the start indicators are
integral at any vertex, so those columns are left continuous; the reported
u, v are read back from the powers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .aggregate import FleetSpec, departure_soc
from .lp import EQ, GE, LE, LinearProgram, MixedIntegerProgram, solve_milp

log = logging.getLogger(__name__)

FIELDS = ("pc", "pd", "u", "v", "soc", "mc", "md", "uz", "vz")
POWER_TOL = 1e-6


class AllocationInfeasible(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


@dataclass
class AllocationProblem:
    p_b: np.ndarray
    fleet: list
    spec: FleetSpec
    tou: np.ndarray
    kappa: float = 1.0
    c_b: float = 78_000.0
    c_l: float = 3_000.0
    step_hours: float = 1.0

    def __post_init__(self):
        self.p_b = np.asarray(self.p_b, dtype=float)
        self.tou = np.asarray(self.tou, dtype=float)
        if self.kappa < 1:
            raise ValueError("kappa must be at least 1")
        if self.tou.shape != self.p_b.shape:
            raise ValueError("price and power series must share the horizon")

    @property
    def horizon(self):
        return self.p_b.size

    @property
    def cycle_cost(self):
        return self.c_b / self.c_l


@dataclass
class EVSchedule:
    p_c: np.ndarray       # (J, T)
    p_d: np.ndarray
    u: np.ndarray
    v: np.ndarray
    soc: np.ndarray       # end-of-step SOC; NaN while away
    cycles: np.ndarray    # (J,)

    @property
    def states(self):
        """+1 charging, -1 discharging, 0 idle, per (EV, step)."""
        return np.where(self.p_c > POWER_TOL, 1, np.where(self.p_d < -POWER_TOL, -1, 0))


class _Index:
    def __init__(self, fleet, T):
        self.win = [(ev.t_arr, min(ev.t_dep, T)) for ev in fleet]
        self.off = []
        k = 0
        for a, d in self.win:
            self.off.append(k)
            k += (d - a) * len(FIELDS)
        self.n = k

    def col(self, j, t, field):
        a, d = self.win[j]
        L = d - a
        return self.off[j] + FIELDS.index(field) * L + (t - a)


def precheck(problem: AllocationProblem):
    T = problem.horizon
    n = np.zeros(T)
    for ev in problem.fleet:
        n[ev.t_arr:min(ev.t_dep, T)] += 1
    cap = n * problem.spec.p_ev_max
    bad = np.flatnonzero(np.abs(problem.p_b) > cap + POWER_TOL)
    if bad.size:
        t = int(bad[0])
        raise AllocationInfeasible(
            f"aggregate power {problem.p_b[t]:.3f} kW at step {t} exceeds the "
            f"{int(n[t])} plugged-in vehicles' limit {cap[t]:.3f} kW", step=t)


def split_residual(problem: AllocationProblem, backend="highs"):
    """Closest per-vehicle-feasible aggregate trace and its per-step shortfall.

    Solves min sum_t |P^B(t) - sum_j p_j(t)| over vehicle powers that respect
    the power limits, SOC bounds and departure SOC.  Charge and discharge in
    one step net out inside a vehicle, so no binaries are needed and the
    result is also the smallest mismatch any MILP split can reach.
    Returns ``(realizable, residual)`` with ``residual = P^B - realizable``.
    """
    from .lp import solve_lp
    spec, T, dt = problem.spec, problem.horizon, problem.step_hours
    p = spec.p_ev_max
    win = [(ev.t_arr, min(ev.t_dep, T)) for ev in problem.fleet]
    off = np.cumsum([0] + [2 * (d - a) for a, d in win])
    n_ev = int(off[-1])
    n = n_ev + 2 * T
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    c = np.zeros(n)
    c[n_ev:] = 1.0
    rows, cols, vals, rhs, senses = [], [], [], [], []
    for j, ev in enumerate(problem.fleet):
        a, d = win[j]
        L = d - a
        if L <= 0:
            continue
        pw = off[j] + np.arange(L)
        so = off[j] + L + np.arange(L)
        lb[pw], ub[pw] = -p, p
        lb[so], ub[so] = spec.soc_min, 1.0
        lb[so[-1]] = max(spec.soc_min, departure_soc(ev, spec))
        for k in range(L):
            r = len(rhs)
            ent = [(so[k], 1.0), (pw[k], -dt / spec.E)] + ([(so[k - 1], -1.0)] if k else [])
            for col, val in ent:
                rows.append(r)
                cols.append(col)
                vals.append(val)
            rhs.append(0.0 if k else ev.soc_ini)
            senses.append(EQ)
    if np.any(lb > ub):
        raise AllocationInfeasible("a vehicle cannot hold its departure SOC")
    for t in range(T):
        r = len(rhs)
        for j, (a, d) in enumerate(win):
            if a <= t < d:
                rows.append(r)
                cols.append(off[j] + t - a)
                vals.append(1.0)
        rows += [r, r]
        cols += [n_ev + 2 * t, n_ev + 2 * t + 1]
        vals += [1.0, -1.0]
        rhs.append(float(problem.p_b[t]))
        senses.append(EQ)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n))
    lp = LinearProgram(c, A, senses, np.array(rhs), lb, ub)
    sol = solve_lp(lp, backend=backend)
    if not sol.optimal:
        raise AllocationInfeasible(f"split check ended with status {sol.status}")
    sl = sol.x[n_ev:].reshape(T, 2)
    residual = sl[:, 0] - sl[:, 1]
    residual[np.abs(residual) <= POWER_TOL] = 0.0
    return problem.p_b - residual, residual


def build_allocation_mip(problem: AllocationProblem):
    precheck(problem)
    spec, T, dt = problem.spec, problem.horizon, problem.step_hours
    ix = _Index(problem.fleet, T)
    p = spec.p_ev_max
    lb = np.zeros(ix.n)
    ub = np.zeros(ix.n)
    c = np.zeros(ix.n)
    ints = []
    rows, cols, vals, rhs, senses, rnames = [], [], [], [], [], []

    def row(entries, sense, b, name):
        r = len(rhs)
        for j_col, val in entries:
            rows.append(r)
            cols.append(j_col)
            vals.append(val)
        rhs.append(b)
        senses.append(sense)
        rnames.append(name)

    names = [""] * ix.n
    half = 0.5 * problem.cycle_cost
    for j, ev in enumerate(problem.fleet):
        a, d = ix.win[j]
        soc0 = departure_soc(ev, spec)
        bounds = {"pc": (0, p), "pd": (-p, 0), "u": (0, 1), "v": (-1, 0),
                  "soc": (spec.soc_min, 1.0), "mc": (0, 1), "md": (0, 1),
                  "uz": (0, 1), "vz": (-1, 0)}
        for t in range(a, d):
            for f in FIELDS:
                k = ix.col(j, t, f)
                lb[k], ub[k] = bounds[f]
                names[k] = f"{f}[{j},{t}]"
                if f in ("mc", "md"):
                    ints.append(k)
            C = lambda f, tt=t: ix.col(j, tt, f)
            c[C("uz")] = half
            c[C("vz")] = -half
            row([(C("pc"), 1.0), (C("u"), -p)], LE, 0.0, f"pcap_c[{j},{t}]")
            row([(C("pd"), 1.0), (C("v"), -p)], GE, 0.0, f"pcap_d[{j},{t}]")
            row([(C("u"), 1.0), (C("v"), -1.0)], LE, 1.0, f"excl[{j},{t}]")
            row([(C("u"), 1.0), (C("mc"), -1.0)], LE, 0.0, f"mode_c[{j},{t}]")
            row([(C("v"), -1.0), (C("md"), -1.0)], LE, 0.0, f"mode_d[{j},{t}]")
            row([(C("mc"), 1.0), (C("md"), 1.0)], LE, 1.0, f"mode[{j},{t}]")
            # mode starts; the step before arrival counts as idle
            ent_c = [(C("uz"), 1.0), (C("mc"), -1.0)]
            ent_d = [(C("vz"), -1.0), (C("md"), -1.0)]
            ent_s = [(C("soc"), 1.0), (C("pc"), -dt / spec.E), (C("pd"), -dt / spec.E)]
            b_s = 0.0
            if t > a:
                ent_c.append((C("mc", t - 1), 1.0))
                ent_d.append((C("md", t - 1), 1.0))
                ent_s.append((C("soc", t - 1), -1.0))
            else:
                b_s = ev.soc_ini
            row(ent_c, GE, 0.0, f"start_c[{j},{t}]")
            row(ent_d, GE, 0.0, f"start_d[{j},{t}]")
            row(ent_s, EQ, b_s, f"soc[{j},{t}]")
        if d > a:
            k = ix.col(j, d - 1, "soc")
            lb[k] = max(lb[k], soc0)
            if lb[k] > ub[k]:
                raise AllocationInfeasible(f"EV {j} cannot hold its departure SOC")
            row([(ix.col(j, t, "uz"), 0.5) for t in range(a, d)] +
                [(ix.col(j, t, "vz"), -0.5) for t in range(a, d)],
                LE, float(problem.kappa), f"kappa[{j}]")
    for t in range(T):
        ent = []
        for j in range(len(problem.fleet)):
            a, d = ix.win[j]
            if a <= t < d:
                ent += [(ix.col(j, t, "pc"), 1.0), (ix.col(j, t, "pd"), 1.0)]
        if ent:     # empty steps were checked against the tolerance above
            row(ent, EQ, float(problem.p_b[t]), f"agg[{t}]")

    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), ix.n))
    lp = LinearProgram(c, A, senses, np.array(rhs), lb, ub, names, rnames)
    mip = MixedIntegerProgram(lp, np.array(sorted(ints), dtype=int), objective_step=half)
    mip.index = ix
    return mip


def _mode_starts(states):
    """Mode-persistent starts: (charging-mode starts, discharging-mode starts)."""
    mode = 0
    sc = sd = 0
    for s in states:
        if s != 0 and s != mode:
            if s > 0:
                sc += 1
            else:
                sd += 1
            mode = s
    return sc, sd


def count_cycles(u, v):
    """Cycles per EV from binary series u in {0,1}, v in {-1,0} (rows are EVs).

    Reconstructs the start indicators u_z, v_z and the idle-transition
    assistants u_za, v_za of the mode sequence and returns 1/2 sum(u_z - v_z).
    """
    u = np.atleast_2d(np.asarray(u))
    v = np.atleast_2d(np.asarray(v))
    if u.shape != v.shape:
        raise ValueError("u and v must have the same shape")
    if np.any((u != 0) & (u != 1)) or np.any((v != 0) & (v != -1)):
        raise ValueError("u must be in {0,1} and v in {-1,0}")
    if np.any((u == 1) & (v == -1)):
        raise ValueError("an EV cannot charge and discharge in the same step")
    out = np.zeros(u.shape[0])
    for j in range(u.shape[0]):
        sc, sd = _mode_starts(u[j] + v[j])
        out[j] = 0.5 * (sc + sd)
    return out


def transition_indicators(u, v):
    """u_z, v_z, u_za, v_za for one EV, mode-persistent reading."""
    u = np.asarray(u)
    v = np.asarray(v)
    T = u.size
    uz, vz, uza, vza = (np.zeros(T, dtype=int) for _ in range(4))
    mode = 0
    prev = 0
    for t in range(T):
        s = int(u[t] + v[t])
        if s != 0 and s != mode:
            if s > 0:
                uz[t] = 1
            else:
                vz[t] = -1
            mode = s
        # leaving a state for idle or the other mode is balanced by an assistant
        if prev > 0 and s <= 0:
            vza[t] = -1
        if prev < 0 and s >= 0:
            uza[t] = 1
        prev = s
    return uz, vz, uza, vza


def greedy_split(problem: AllocationProblem):
    """Feasible sequential split or ``None``.

    Each step first serves what vehicles must charge now to still reach their
    departure SOC, then hands the remainder to vehicles already in the
    requested mode, most flexible first.
    """
    spec, T, dt = problem.spec, problem.horizon, problem.step_hours
    J = len(problem.fleet)
    p = spec.p_ev_max
    e = np.array([ev.soc_ini for ev in problem.fleet]) * spec.E
    need = np.array([departure_soc(ev, spec) for ev in problem.fleet]) * spec.E
    emin = spec.soc_min * spec.E
    arr = np.array([ev.t_arr for ev in problem.fleet])
    dep = np.array([min(ev.t_dep, T) for ev in problem.fleet])
    pc = np.zeros((J, T))
    pd = np.zeros((J, T))
    mode = np.zeros(J, dtype=int)
    for t in range(T):
        here = np.flatnonzero((arr <= t) & (t < dep))
        if here.size == 0:
            if abs(problem.p_b[t]) > POWER_TOL:
                return None
            continue
        later = (dep[here] - t - 1) * p * dt
        must = np.clip(need[here] - e[here] - later, 0.0, p * dt) / dt
        lo = must.copy()
        # the most each EV can discharge now and still make it
        room_dn = np.minimum(p, (e[here] - np.maximum(emin, need[here] - later)) / dt)
        room_dn = np.maximum(room_dn, 0.0)
        hi = np.minimum(p, (spec.E - e[here]) / dt)
        if np.any(lo > hi + 1e-9):
            return None
        x = lo.copy()
        rest = problem.p_b[t] - x.sum()
        if rest > POWER_TOL:
            order = sorted(range(here.size), key=lambda k: (mode[here[k]] != 1, -(hi[k] - x[k]), here[k]))
            for k in order:
                take = min(rest, hi[k] - x[k])
                x[k] += take
                rest -= take
                if rest <= POWER_TOL:
                    break
        elif rest < -POWER_TOL:
            # only vehicles without forced charging may discharge
            order = sorted((k for k in range(here.size) if lo[k] <= 0),
                           key=lambda k: (mode[here[k]] != -1, -room_dn[k], here[k]))
            for k in order:
                take = min(-rest, room_dn[k])
                x[k] -= take
                rest += take
                if rest >= -POWER_TOL:
                    break
        if abs(rest) > 1e-6:
            return None
        for k, j in enumerate(here):
            if x[k] > POWER_TOL:
                pc[j, t] = x[k]
                mode[j] = 1
            elif x[k] < -POWER_TOL:
                pd[j, t] = x[k]
                mode[j] = -1
            e[j] += x[k] * dt
    final_ok = all(e[j] >= need[j] - 1e-6 for j in range(J))
    if not final_ok:
        return None
    return pc, pd


def _schedule_from_powers(problem, pc, pd):
    spec, T, dt = problem.spec, problem.horizon, problem.step_hours
    J = len(problem.fleet)
    u = (pc > POWER_TOL).astype(int)
    v = -(pd < -POWER_TOL).astype(int)
    soc = np.full((J, T), np.nan)
    for j, ev in enumerate(problem.fleet):
        a, d = ev.t_arr, min(ev.t_dep, T)
        soc[j, a:d] = ev.soc_ini + np.cumsum(pc[j, a:d] + pd[j, a:d]) * dt / spec.E
    return EVSchedule(p_c=pc, p_d=pd, u=u, v=v, soc=soc, cycles=count_cycles(u, v))


def _incumbent_vector(mip, problem, pc, pd):
    ix = mip.index
    spec = problem.spec
    x = np.zeros(mip.lp.c.size)
    sched = _schedule_from_powers(problem, pc, pd)
    for j, ev in enumerate(problem.fleet):
        a, d = ix.win[j]
        states = sched.u[j] + sched.v[j]
        uz, vz, _, _ = transition_indicators(sched.u[j, a:d], sched.v[j, a:d])
        mode = 0
        for t in range(a, d):
            if states[t] != 0:
                mode = states[t]
            vals = {"pc": pc[j, t], "pd": pd[j, t], "u": sched.u[j, t], "v": sched.v[j, t],
                    "soc": sched.soc[j, t], "mc": int(mode > 0), "md": int(mode < 0),
                    "uz": uz[t - a], "vz": vz[t - a]}
            for f, val in vals.items():
                x[ix.col(j, t, f)] = val
    return x


def costs(problem: AllocationProblem, schedule: EVSchedule):
    k_e = float(np.sum(problem.p_b * problem.tou) * problem.step_hours)
    cycles = float(schedule.cycles.sum())
    k_w = cycles * problem.cycle_cost
    return {"k_e": k_e, "k_w": k_w, "k_total": k_e + k_w, "cycles_total": cycles}


def allocate(problem: AllocationProblem, backend="highs", node_limit=1_000_000,
             time_limit=None, warm_start=True, check_split=True, presolve=False):
    if check_split:
        precheck(problem)
        _, res = split_residual(problem)
        bad = np.flatnonzero(np.abs(res) > POWER_TOL)
        if bad.size:
            t = int(bad[0])
            raise AllocationInfeasible(
                f"aggregate power cannot be split across the vehicles: shortfall "
                f"{res[t]:.4f} kW at step {t} ({np.abs(res).sum():.4f} kW over "
                f"{bad.size} steps)", step=t)
    mip = build_allocation_mip(problem)
    x0 = None
    if warm_start:
        g = greedy_split(problem)
        # the greedy split ignores the cycle cap
        if g is not None and _schedule_from_powers(problem, *g).cycles.max(initial=0) <= problem.kappa:
            x0 = _incumbent_vector(mip, problem, *g)
    if backend == "bnb":
        sol = solve_milp(mip, "bnb", node_limit=node_limit, incumbent=x0)
    else:
        sol = solve_milp(mip, backend, node_limit=node_limit, time_limit=time_limit,
                         presolve=presolve)
    if sol.status == "infeasible":
        raise AllocationInfeasible("no per-vehicle split of the aggregate schedule satisfies the "
                                   "vehicle constraints")
    if sol.x is None:
        raise RuntimeError(f"allocation MILP ended with status {sol.status}")
    ix = mip.index
    T, J = problem.horizon, len(problem.fleet)
    pc = np.zeros((J, T))
    pd = np.zeros((J, T))
    for j in range(J):
        a, d = ix.win[j]
        for t in range(a, d):
            pc[j, t] = sol.x[ix.col(j, t, "pc")]
            pd[j, t] = sol.x[ix.col(j, t, "pd")]
    # a vehicle never both charges and discharges; clean solver noise
    pc[pc < POWER_TOL] = 0.0
    pd[pd > -POWER_TOL] = 0.0
    sched = _schedule_from_powers(problem, pc, pd)
    out = costs(problem, sched)
    out["mip_objective"] = float(sol.objective)
    out["gap"] = float(sol.gap)
    out["status"] = sol.status
    return sched, out


def allocate_with_escalation(problem: AllocationProblem, kappa_max=None, **kw):
    """Retry with a larger cycle cap when the split is infeasible at the configured one."""
    kappa_max = kappa_max or problem.horizon
    k = problem.kappa
    while True:
        try:
            sched, out = allocate(problem, **kw)
            out["kappa"] = k
            return sched, out
        except AllocationInfeasible as exc:
            if exc.step is not None or k >= kappa_max:
                raise
            k += 1
            log.warning("allocation infeasible with kappa=%s; retrying with %s", k - 1, k)
            problem = AllocationProblem(problem.p_b, problem.fleet, problem.spec, problem.tou,
                                        k, problem.c_b, problem.c_l, problem.step_hours)


def allocate_realizable(problem: AllocationProblem, **kw):
    """Allocate the closest per-vehicle-feasible trace instead of failing.

    The aggregate bounds of stage 1 are a relaxation of the per-vehicle ones,
    so an optimal aggregate schedule can move energy between vehicles faster
    than their chargers allow.  The reported ``residual`` is the per-step gap
    between the stage-1 power and the power the fleet actually delivers.
    """
    real, res = split_residual(problem)
    sub = AllocationProblem(real, problem.fleet, problem.spec, problem.tou, problem.kappa,
                            problem.c_b, problem.c_l, problem.step_hours)
    sched, out = allocate_with_escalation(sub, check_split=False, **kw)
    if np.any(res != 0):
        log.warning("aggregate schedule not splittable; %.4f kWh reassigned over %d steps",
                    np.abs(res).sum() * problem.step_hours, int(np.count_nonzero(res)))
    out["residual"] = res
    out["residual_abs_sum"] = float(np.abs(res).sum())
    # the energy cost follows the power the fleet really draws
    out.update(costs(sub, sched))
    return sched, out


def schedule_csv(schedule: EVSchedule):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ev_id", "hour", "p_c", "p_d", "state", "soc"])
    J, T = schedule.p_c.shape
    st = schedule.states
    for j in range(J):
        for t in range(T):
            if np.isnan(schedule.soc[j, t]):
                continue
            w.writerow([j, t, repr(float(schedule.p_c[j, t])), repr(float(schedule.p_d[j, t])),
                        int(st[j, t]), repr(float(schedule.soc[j, t]))])
    return buf.getvalue()


def state_grid_csv(schedule: EVSchedule):
    """EV x step matrix: 1 charging, -1 discharging, 0 idle, blank while away."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    J, T = schedule.p_c.shape
    w.writerow(["ev_id"] + [str(t) for t in range(T)])
    st = schedule.states
    for j in range(J):
        w.writerow([j] + ["" if np.isnan(schedule.soc[j, t]) else int(st[j, t]) for t in range(T)])
    return buf.getvalue()


def costs_json(c):
    keep = {k: c[k] for k in ("k_e", "k_w", "k_total", "cycles_total")}
    return json.dumps(keep, indent=1, sort_keys=True)
