"""Shadow-price based decentralised scheduling.

The exchange-cap duals of the centralised problem are added to the TOU
tariff, the sum is rescaled so that the bills the microgrids pay at the new
price equal the coordinator's payment to the main grid, and each microgrid
then schedules its own fleet against that price with no other information.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .lp import solve_lp
from .stage1 import (SolverFailure, InfeasibleProfile, Stage1Result, SystemData,
                     build_exchange_lp, electricity_cost, exchange_stats, solve_centralized)

log = logging.getLogger(__name__)

TIE_BREAK = 1e-6
CAP_TOL = 1e-3


@dataclass
class CapDuals:
    theta: np.ndarray     # (S, T), dual of P^cap - sum_i P^ex >= 0
    eta: np.ndarray       # (S, T), dual of P^cap + sum_i P^ex >= 0

    @property
    def total(self):
        return float(self.theta.sum() + self.eta.sum())

    def binding_steps(self, tol=1e-9):
        return np.flatnonzero((self.theta > tol).any(axis=0) | (self.eta > tol).any(axis=0))


@dataclass
class PriceSignal:
    values: np.ndarray
    label: str = "original"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("price must be finite")
        if self.label == "original" and np.any(self.values <= 0):
            raise ValueError("original tariff must be positive")

    def to_json(self):
        return json.dumps({"horizon": int(self.values.size),
                           "values": [float(v) for v in self.values],
                           "label": self.label}, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        v = np.array(d["values"], dtype=float)
        if v.size != int(d["horizon"]):
            raise ValueError("price horizon mismatch")
        return cls(v, d.get("label", "final"))

    def staircase(self, start_hour=0, step_hours=1.0):
        """Contiguous constant-price periods as (start clock hour, end clock hour, price)."""
        out = []
        T = self.values.size
        t = 0
        while t < T:
            u = t
            while u + 1 < T and self.values[u + 1] == self.values[t]:
                u += 1
            a = (start_hour + t * step_hours) % 24
            b = (start_hour + (u + 1) * step_hours) % 24 or 24
            out.append((a, b, float(self.values[t])))
            t = u + 1
        return out


def extract_cap_duals(result: Stage1Result):
    lp, sol = result.lp, result.solution
    if lp is None or sol is None or not sol.optimal:
        raise ValueError("need an optimal centralised solve")
    S, _, T = result.data.shape
    try:
        hi = np.array([lp.row_index(f"cap_hi[{s},{t}]") for s in range(S) for t in range(T)])
        lo = np.array([lp.row_index(f"cap_lo[{s},{t}]") for s in range(S) for t in range(T)])
    except KeyError as exc:
        raise KeyError(f"cap row tag missing: {exc}") from None
    return CapDuals(theta=sol.y[hi].reshape(S, T), eta=sol.y[lo].reshape(S, T))


def updated_price(tou: PriceSignal, duals: CapDuals):
    """C*(t) = C(t) + sum_s theta_s(t) - sum_s eta_s(t)."""
    v = tou.values + duals.theta.sum(axis=0) - duals.eta.sum(axis=0)
    return PriceSignal(v, "updated")


def final_price(tou: PriceSignal, duals: CapDuals, eps):
    return PriceSignal(updated_price(tou, duals).values * eps, "final")


def _tie_weight(price):
    # relative to the price level so that rescaling the price keeps the argmin
    return TIE_BREAK * float(np.mean(np.abs(price)))


def decentralized_schedule(data: SystemData, microgrid_id, price: PriceSignal,
                           backend="simplex", tie_break=True):
    """One microgrid's response to a broadcast price: (p_ex, p_b, b) each (S, T)."""
    sub = data.subset(microgrids=[microgrid_id], renormalise=False)
    w = _tie_weight(price.values) if tie_break else 0.0
    lp = build_exchange_lp(sub, price=price.values, with_cap=False, tie_break=w)
    sol = solve_lp(lp, backend=backend)
    if sol.status == "infeasible":
        raise InfeasibleProfile(f"microgrid {microgrid_id}: price response infeasible")
    if not sol.optimal:
        raise SolverFailure(f"microgrid {microgrid_id}: solver status {sol.status}")
    b, pb, pex = lp.layout.split(sol.x[:lp.layout.n_vars])
    return pex[:, 0], pb[:, 0], b[:, 0]


@dataclass
class DecentralizedResult:
    p_ex: np.ndarray      # (S, I, T)
    p_b: np.ndarray
    b: np.ndarray
    price: PriceSignal
    W: float              # expected bill at the price used

    def as_stage1(self, data: SystemData, label):
        cost = electricity_cost(data, self.p_ex)
        tot = np.abs(self.p_ex.sum(axis=1)).max()
        return Stage1Result(p_cap=float(tot), p_ex=self.p_ex, p_b=self.p_b, b=self.b,
                            expected_cost=cost, objective=cost + data.rho * float(tot),
                            solution=None, lp=None, data=data, label=label)


def solve_db2(data: SystemData, price: PriceSignal, backend="simplex", tie_break=True):
    """Uncoupled price response of every microgrid; ``W`` is the expected bill at ``price``."""
    S, I, T = data.shape
    pex = np.zeros((S, I, T))
    pb = np.zeros_like(pex)
    b = np.zeros_like(pex)
    for i in range(I):
        pex[:, i], pb[:, i], b[:, i] = decentralized_schedule(data, i, price, backend, tie_break)
    W = electricity_cost(data, pex, price.values)
    return DecentralizedResult(pex, pb, b, price, W)


def solve_db2_joint(data: SystemData, price: PriceSignal, backend="simplex"):
    """The same problem solved as one LP (no tie-break); used to check separability."""
    lp = build_exchange_lp(data, price=price.values, with_cap=False)
    sol = solve_lp(lp, backend=backend)
    if not sol.optimal:
        raise SolverFailure(f"joint price response ended with status {sol.status}")
    return float(sol.objective)


def scaling_factor(data: SystemData, db2: DecentralizedResult):
    """eps = W'/W with W' the expected bill of the same exchanges at the original TOU."""
    W_prime = electricity_cost(data, db2.p_ex)
    if db2.W <= 0:
        log.warning("non-positive price-response bill W=%.6g; using eps = 1", db2.W)
        return 1.0, W_prime
    return W_prime / db2.W, W_prime


@dataclass
class Algorithm1Result:
    centralized: Stage1Result
    duals: CapDuals
    updated: PriceSignal
    final: PriceSignal
    eps: float
    W: float
    W_prime: float
    decentralized: DecentralizedResult
    report: dict


def run_algorithm1(data: SystemData, backend="simplex", centralized: Stage1Result | None = None,
                   tie_break=True):
    # steps 1-2: centralised problem and its cap duals
    cen = centralized or solve_centralized(data, backend=backend)
    duals = extract_cap_duals(cen)
    tou = PriceSignal(data.tou, "original")
    upd = updated_price(tou, duals)
    # steps 3-4: uncoupled response at the updated price, W and W'
    db2 = solve_db2(data, upd, backend, tie_break)
    eps, W_prime = scaling_factor(data, db2)
    # step 5: broadcast the final price; step 6: each microgrid schedules itself
    fin = final_price(tou, duals, eps)
    dec = solve_db2(data, fin, backend, tie_break)
    bills = electricity_cost(data, dec.p_ex, fin.values)
    dec_stats = exchange_stats(dec.as_stage1(data, "decentralized"))
    peak = dec_stats["peak"]
    report = {
        "p_cap": cen.p_cap,
        "dual_sum": duals.total,
        "eps": eps,
        "W": db2.W,
        "W_prime": W_prime,
        "bills_final_price": bills,
        "budget_residual": abs(bills - W_prime) / max(1.0, abs(W_prime)),
        "decentralized_peak": peak,
        "cap_respected": bool(peak <= cen.p_cap + CAP_TOL),
        "cap_excess": float(max(0.0, peak - cen.p_cap)),
    }
    if not report["cap_respected"]:
        log.warning("decentralised peak %.3f kW exceeds P^cap %.3f kW", peak, cen.p_cap)
    return Algorithm1Result(cen, duals, upd, fin, eps, db2.W, W_prime, dec, report)


def strategy_table(data: SystemData, alg: Algorithm1Result, backend="simplex"):
    """Rows (strategy, avg cost, avg peak, worst-case cost, worst-case peak).

    Every row reports the scenario that is worst for the centralised schedule.
    """
    rows = []
    tou = PriceSignal(data.tou, "original")
    dec_tou = solve_db2(data, tou, backend)
    runs = [("centralized", alg.centralized),
            ("decentralized", alg.decentralized.as_stage1(data, "decentralized")),
            ("decentralized_tou", dec_tou.as_stage1(data, "decentralized_tou"))]
    worst = exchange_stats(alg.centralized)["worst_scenario"]
    for name, res in runs:
        st = exchange_stats(res, worst=worst)
        rows.append({"strategy": name, "avg_cost": st["expected_cost"], "avg_peak": st["avg_peak"],
                     "worst_cost": st["worst_cost"], "worst_peak": st["worst_peak"]})
    return rows
