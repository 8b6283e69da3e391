"""Stage-1 stochastic exchange scheduling for the microgrid central controller."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .aggregate import AggregateBatteryProfile, FleetSpec, departure_soc
from .lp import EQ, GE, LE, LinearProgram, PrimalDualSolution, solve_lp

log = logging.getLogger(__name__)


class InfeasibleProfile(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


@dataclass
class SystemData:
    """Inputs of the stage-1 problem.

    ``wind`` is (S, I, T) kW, ``profiles[s][i]`` the aggregate battery of
    microgrid i in scenario s.  ``fleets`` (optional, same nesting) are the
    itineraries behind the profiles, needed by the uncoordinated baseline.
    """

    loads: np.ndarray            # (I, T) kW
    tou: np.ndarray              # (T,) CNY/kWh
    wind: np.ndarray             # (S, I, T) kW
    profiles: list
    probabilities: np.ndarray    # (S,)
    p_ex_max: np.ndarray | None = None
    rho: float = 1.0
    step_hours: float = 1.0
    fleets: list | None = None
    fleet_spec: FleetSpec = field(default_factory=FleetSpec)

    def __post_init__(self):
        self.loads = np.atleast_2d(np.asarray(self.loads, dtype=float))
        self.tou = np.asarray(self.tou, dtype=float)
        self.wind = np.asarray(self.wind, dtype=float)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        I, T = self.loads.shape
        if self.p_ex_max is None:
            self.p_ex_max = np.full(I, 10_000.0)
        self.p_ex_max = np.broadcast_to(np.asarray(self.p_ex_max, dtype=float), (I,)).copy()
        S = self.probabilities.size
        if self.wind.shape != (S, I, T):
            raise ValueError(f"wind must have shape {(S, I, T)}, got {self.wind.shape}")
        if self.tou.shape != (T,):
            raise ValueError("TOU price must cover the horizon")
        if len(self.profiles) != S or any(len(p) != I for p in self.profiles):
            raise ValueError("need one profile per (scenario, microgrid)")
        if np.any(self.loads < 0):
            raise ValueError("loads must be nonnegative")
        if np.any(self.tou <= 0):
            raise ValueError("prices must be positive")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if np.any(self.p_ex_max <= 0):
            raise ValueError("line limits must be positive")
        if abs(self.probabilities.sum() - 1.0) > 1e-9:
            raise ValueError("scenario probabilities must sum to 1")

    @property
    def shape(self):
        S = self.probabilities.size
        I, T = self.loads.shape
        return S, I, T

    def subset(self, scenarios=None, microgrids=None, renormalise=True):
        """Restrict to some scenarios and/or microgrids."""
        S, I, _ = self.shape
        ss = list(range(S)) if scenarios is None else list(scenarios)
        ii = list(range(I)) if microgrids is None else list(microgrids)
        p = self.probabilities[ss]
        if renormalise:
            p = p / p.sum()
        return SystemData(
            loads=self.loads[ii], tou=self.tou, wind=self.wind[np.ix_(ss, ii)],
            profiles=[[self.profiles[s][i] for i in ii] for s in ss], probabilities=p,
            p_ex_max=self.p_ex_max[ii], rho=self.rho, step_hours=self.step_hours,
            fleets=None if self.fleets is None else [[self.fleets[s][i] for i in ii] for s in ss],
            fleet_spec=self.fleet_spec)


@dataclass
class Stage1Result:
    p_cap: float
    p_ex: np.ndarray             # (S, I, T)
    p_b: np.ndarray
    b: np.ndarray
    expected_cost: float         # electricity cost only, no capacity term
    objective: float
    solution: PrimalDualSolution | None
    lp: LinearProgram | None
    data: SystemData
    label: str = "centralized"


class Layout:
    """Column/row index arithmetic for the stage-1 LP."""

    def __init__(self, S, I, T, with_cap=True):
        self.S, self.I, self.T = S, I, T
        self.N = S * I * T
        self.with_cap = with_cap

    def cell(self, s, i, t):
        return (s * self.I + i) * self.T + t

    def B(self, s, i, t):
        return self.cell(s, i, t)

    def PB(self, s, i, t):
        return self.N + self.cell(s, i, t)

    def PEX(self, s, i, t):
        return 2 * self.N + self.cell(s, i, t)

    @property
    def cap(self):
        return 3 * self.N

    @property
    def n_vars(self):
        return 3 * self.N + (1 if self.with_cap else 0)

    def balance_row(self, s, i, t):
        return self.cell(s, i, t)

    def recursion_row(self, s, i, t):
        return self.N + self.cell(s, i, t)

    def theta_row(self, s, t):
        return 2 * self.N + s * self.T + t

    def eta_row(self, s, t):
        return 2 * self.N + self.S * self.T + s * self.T + t

    def split(self, x):
        sh = (self.S, self.I, self.T)
        N = self.N
        return x[:N].reshape(sh), x[N:2 * N].reshape(sh), x[2 * N:3 * N].reshape(sh)


def _check_profiles(data: SystemData, tol=1e-9):
    for s, row in enumerate(data.profiles):
        for i, p in enumerate(row):
            bad = np.flatnonzero(p.b_min > p.b_max + tol)
            if bad.size:
                raise InfeasibleProfile(
                    f"scenario {s}, microgrid {i}: energy floor above capacity at steps {bad.tolist()}")


def build_exchange_lp(data: SystemData, price=None, with_cap=True, tie_break=0.0):
    """Stage-1 LP; with ``with_cap=False`` and a price, the uncoupled price-response problem.

    Rows are tagged ``bal[s,i,t]``, ``rec[s,i,t]``, ``cap_hi[s,t]`` (dual theta)
    and ``cap_lo[s,t]`` (dual eta).  ``tie_break`` adds ``tie_break * |P^B|``
    through split variables so that degenerate price responses are unique.
    """
    _check_profiles(data)
    S, I, T = data.shape
    L = Layout(S, I, T, with_cap)
    dt = data.step_hours
    C = data.tou if price is None else np.asarray(price, dtype=float)
    tau = data.probabilities

    rows, cols, vals = [], [], []
    rhs = np.zeros(2 * L.N + (2 * S * T if with_cap else 0))
    senses = [EQ] * (2 * L.N) + ([GE] * (2 * S * T) if with_cap else [])
    cell = np.arange(L.N)
    s_idx, i_idx, t_idx = np.unravel_index(cell, (S, I, T))

    # power balance: P^ex - P^B = P^L - P^W
    rows += [cell, cell]
    cols += [2 * L.N + cell, L.N + cell]
    vals += [np.ones(L.N), -np.ones(L.N)]
    rhs[:L.N] = data.loads[i_idx, t_idx] - data.wind[s_idx, i_idx, t_idx]

    # energy recursion: B(t) - B(t-1) - P^B(t) dt = delta_b(t)  (B(-1) = b0)
    rr = L.N + cell
    rows += [rr, rr]
    cols += [cell, L.N + cell]
    vals += [np.ones(L.N), -dt * np.ones(L.N)]
    prev = t_idx > 0
    rows.append(rr[prev])
    cols.append(cell[prev] - 1)
    vals.append(-np.ones(prev.sum()))

    lb = np.empty(L.n_vars)
    ub = np.empty(L.n_vars)
    for s in range(S):
        for i in range(I):
            p = data.profiles[s][i]
            c0 = L.cell(s, i, 0)
            sl = slice(c0, c0 + T)
            rhs[L.N + c0:L.N + c0 + T] = p.delta_b
            rhs[L.N + c0] += p.b0
            lb[sl], ub[sl] = p.b_min, p.b_max
            lb[L.N + c0:L.N + c0 + T] = p.p_min
            ub[L.N + c0:L.N + c0 + T] = p.p_max
    lb[2 * L.N:3 * L.N] = -data.p_ex_max[i_idx]
    ub[2 * L.N:3 * L.N] = data.p_ex_max[i_idx]

    if with_cap:
        lb[L.cap], ub[L.cap] = 0.0, np.inf
        for side, sign in ((0, -1.0), (1, 1.0)):
            r = 2 * L.N + side * S * T + s_idx * T + t_idx
            rows += [r]
            cols += [2 * L.N + cell]
            vals += [sign * np.ones(L.N)]
            rc = 2 * L.N + side * S * T + np.arange(S * T)
            rows += [rc]
            cols += [np.full(S * T, L.cap)]
            vals += [np.ones(S * T)]

    c = np.zeros(L.n_vars)
    c[2 * L.N:3 * L.N] = tau[s_idx] * C[t_idx] * dt
    if with_cap:
        c[L.cap] = data.rho

    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(rhs.size, L.n_vars))
    names = [f"{k}[{s},{i},{t}]" for k in ("B", "PB", "PEX")
             for s, i, t in zip(s_idx, i_idx, t_idx)]
    rnames = [f"{k}[{s},{i},{t}]" for k in ("bal", "rec") for s, i, t in zip(s_idx, i_idx, t_idx)]
    if with_cap:
        names.append("PCAP")
        rnames += [f"{k}[{s},{t}]" for k in ("cap_hi", "cap_lo") for s in range(S) for t in range(T)]
    lp = LinearProgram(c, A, senses, rhs, lb, ub, names, rnames)
    if tie_break > 0:
        lp = _add_abs_penalty(lp, L, tie_break, tau)
    lp.layout = L
    return lp


def _add_abs_penalty(lp: LinearProgram, L: Layout, weight, tau):
    """Append P^B = q+ - q-, q+/- >= 0 with cost ``weight * tau_s`` each."""
    N = L.N
    n0 = lp.c.size
    m0 = lp.rhs.size
    cell = np.arange(N)
    extra = sp.csr_matrix((np.concatenate([np.ones(N), -np.ones(N), np.ones(N)]),
                           (np.concatenate([cell, cell, cell]),
                            np.concatenate([N + cell, n0 + cell, n0 + N + cell]))),
                          shape=(N, n0 + 2 * N))
    A = sp.vstack([sp.hstack([lp.A, sp.csr_matrix((m0, 2 * N))]), extra]).tocsr()
    s_idx = cell // (L.I * L.T)
    w = weight * tau[s_idx]
    c = np.concatenate([lp.c, w, w])
    lb = np.concatenate([lp.lb, np.zeros(2 * N)])
    ub = np.concatenate([lp.ub, np.full(2 * N, np.inf)])
    names = lp.var_names + [f"QP[{j}]" for j in range(N)] + [f"QM[{j}]" for j in range(N)]
    rnames = lp.row_names + [f"abs[{j}]" for j in range(N)]
    return LinearProgram(c, A, lp.senses + [EQ] * N, np.concatenate([lp.rhs, np.zeros(N)]),
                         lb, ub, names, rnames)


def build_pb1(data: SystemData):
    return build_exchange_lp(data, with_cap=True)


def electricity_cost(data: SystemData, p_ex, price=None):
    """Expected bill sum_s tau_s sum_{i,t} C(t) P^ex dt."""
    C = data.tou if price is None else np.asarray(price, dtype=float)
    per_s = np.einsum("sit,t->s", p_ex, C) * data.step_hours
    return float(data.probabilities @ per_s)


def _solve(lp, backend):
    sol = solve_lp(lp, backend=backend)
    if sol.status == "infeasible":
        raise InfeasibleProfile("stage-1 problem is infeasible")
    if not sol.optimal:
        raise SolverFailure(f"LP solver ended with status {sol.status}")
    return sol


def solve_centralized(data: SystemData, backend="simplex"):
    lp = build_pb1(data)
    sol = _solve(lp, backend)
    L = lp.layout
    b, pb, pex = L.split(sol.x)
    p_cap = float(sol.x[L.cap])
    cost = electricity_cost(data, pex)
    return Stage1Result(p_cap=p_cap, p_ex=pex, p_b=pb, b=b, expected_cost=cost,
                        objective=float(sol.objective), solution=sol, lp=lp, data=data)


def least_movement_battery(result: Stage1Result, backend="highs", rel_tol=1e-9):
    """Among optimal stage-1 solutions, the one with least expected battery throughput.

    Pb-1 is degenerate in P^B: charging and discharging within one price tier
    costs nothing.  Re-solving with the optimal objective as a constraint and
    sum_s tau_s |P^B| as objective drops such round trips.  Only the battery
    power is returned; duals and the reported schedule stay those of
    ``result``.
    """
    lp = result.lp
    if lp is None or result.solution is None:
        raise ValueError("need a solved centralised problem")
    L = lp.layout
    pen = _add_abs_penalty(lp, L, 1.0, result.data.probabilities)
    c = pen.c.copy()
    c[:lp.c.size] = 0.0
    obj_row = sp.csr_matrix(np.concatenate([lp.c, np.zeros(pen.c.size - lp.c.size)]))
    bound = result.objective + rel_tol * (1.0 + abs(result.objective))
    lex = LinearProgram(c, sp.vstack([pen.A, obj_row]).tocsr(), pen.senses + [LE],
                        np.concatenate([pen.rhs, [bound]]), pen.lb, pen.ub)
    sol = solve_lp(lex, backend=backend)
    if not sol.optimal:
        log.warning("battery polishing ended with status %s; keeping the raw schedule", sol.status)
        return result.p_b
    return L.split(sol.x[:L.n_vars])[1]


def solve_sin_pb1(data: SystemData, scenario, backend="simplex"):
    """Single-scenario stage-1 problem for one scenario of ``data``."""
    return solve_centralized(data.subset([scenario]), backend=backend)


def greedy_charge_profile(ev, spec: FleetSpec, horizon, step_hours=1.0):
    """Charge at full power from arrival until the departure SOC is reached."""
    need = max(0.0, (departure_soc(ev, spec) - ev.soc_ini) * spec.E)
    p = np.zeros(horizon)
    t = ev.t_arr
    stop = min(ev.t_dep, horizon)
    while need > 1e-12 and t < stop:
        e = min(need, spec.p_ev_max * step_hours)
        p[t] = e / step_hours
        need -= e
        t += 1
    if need > 1e-9:
        log.warning("EV cannot reach its departure SOC; charging through the whole window")
    return p


def uncoordinated_baseline(data: SystemData):
    if data.fleets is None:
        raise ValueError("the uncoordinated baseline needs the itineraries behind the profiles")
    S, I, T = data.shape
    pb = np.zeros((S, I, T))
    for s in range(S):
        for i in range(I):
            for ev in data.fleets[s][i]:
                pb[s, i] += greedy_charge_profile(ev, data.fleet_spec, T, data.step_hours)
    pex = data.loads[None] - data.wind + pb
    b = np.zeros_like(pb)
    for s in range(S):
        for i in range(I):
            prof = data.profiles[s][i]
            b[s, i] = prof.b0 + np.cumsum(pb[s, i] * data.step_hours + prof.delta_b)
    p_cap = float(np.abs(pex.sum(axis=1)).max())
    cost = electricity_cost(data, pex)
    return Stage1Result(p_cap=p_cap, p_ex=pex, p_b=pb, b=b, expected_cost=cost,
                        objective=cost + data.rho * p_cap, solution=None, lp=None, data=data,
                        label="uncoordinated")


def exchange_stats(result: Stage1Result, price=None, worst=None):
    """Peak, expected cost and SD of the expected total exchange; worst-case scenario figures.

    The worst case is the scenario with the largest peak unless ``worst``
    pins a scenario index, so strategies can be compared on the same day.
    """
    data = result.data
    tot = result.p_ex.sum(axis=1)                       # (S, T)
    mean = data.probabilities @ tot
    per_s_peak = np.abs(tot).max(axis=1)
    if worst is None:
        worst = int(np.argmax(per_s_peak))
    C = data.tou if price is None else np.asarray(price, dtype=float)
    worst_cost = float(result.p_ex[worst].sum(axis=0) @ C * data.step_hours)
    return {
        "peak": float(per_s_peak.max()),
        "expected_cost": electricity_cost(data, result.p_ex, C),
        "sd": float(mean.std()),
        "avg_peak": float(np.abs(mean).max()),
        "worst_scenario": worst,
        "worst_cost": worst_cost,
        "worst_peak": float(per_s_peak[worst]),
    }
