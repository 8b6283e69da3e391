"""Adapter to scipy's HiGHS interface with the project's dual convention.

Used as an independent second route for cross-checks and as the fast backend
for full-scale problems.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .model import EQ, GE, LE, LinearProgram, MixedIntegerProgram, PrimalDualSolution

_STATUS = {0: "optimal", 2: "infeasible", 3: "unbounded"}


def highs_lp(lp: LinearProgram, tol=1e-9):
    s = np.array(lp.senses, dtype=object)
    eq, ge, le = np.flatnonzero(s == EQ), np.flatnonzero(s == GE), np.flatnonzero(s == LE)
    ub_rows = np.concatenate([ge, le])
    sign = np.concatenate([-np.ones(ge.size), np.ones(le.size)])
    A_ub = sp.diags(sign) @ lp.A[ub_rows] if ub_rows.size else None
    b_ub = sign * lp.rhs[ub_rows] if ub_rows.size else None
    A_eq = lp.A[eq] if eq.size else None
    b_eq = lp.rhs[eq] if eq.size else None
    bounds = np.column_stack([np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
                              np.where(np.isfinite(lp.ub), lp.ub, np.inf)])
    res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ds",
                  options={"primal_feasibility_tolerance": tol,
                           "dual_feasibility_tolerance": tol, "presolve": True})
    status = _STATUS.get(res.status, "error")
    if status != "optimal":
        return PrimalDualSolution(status=status, message=res.message)
    y = np.zeros(lp.rhs.size)
    if eq.size:
        y[eq] = res.eqlin.marginals
    if ub_rows.size:
        # both inequality kinds were passed as "<=": normalised dual is -marginal
        y[ub_rows] = -res.ineqlin.marginals
    rc = res.lower.marginals + res.upper.marginals
    return PrimalDualSolution(status="optimal", x=res.x, y=y, reduced_costs=rc,
                              objective=float(res.fun), iterations=int(res.nit),
                              message=res.message)


def highs_milp(mip: MixedIntegerProgram, time_limit=None, gap=0.0, node_limit=None,
               presolve=True):
    """HiGHS branch and cut through ``scipy.optimize.milp``.

    The HiGHS build shipped with scipy 1.15 occasionally returns a wrong
    optimum or a false infeasible verdict on tiny MILPs when presolve is on
    (about 1 in 500 random 2-4 column instances).  ``presolve=False`` avoids
    that at a large speed cost on big models.
    """
    lp = mip.lp
    lo, hi = lp.row_bounds()
    integrality = np.zeros(lp.c.size, dtype=np.uint8)
    integrality[mip.integers] = 1
    opts = {"mip_rel_gap": gap, "disp": False, "presolve": bool(presolve)}
    if mip.objective_step > 0:
        # a gap below one lattice step already proves the incumbent optimal
        opts["mip_abs_gap"] = mip.objective_step * (1 - 1e-6)
    if time_limit:
        opts["time_limit"] = time_limit
    if node_limit:
        # node counts are reproducible, wall-clock limits are not
        opts["node_limit"] = int(node_limit)
    cons = [LinearConstraint(lp.A, lo, hi)] if lp.A.shape[0] else []
    with warnings.catch_warnings():
        # scipy does not list mip_abs_gap but forwards it to HiGHS unchanged
        warnings.filterwarnings("ignore", "Unrecognized options", RuntimeWarning)
        res = milp(lp.c, constraints=cons, integrality=integrality,
                   bounds=Bounds(lp.lb, lp.ub), options=opts)
    if res.status == 0 or (res.status == 1 and res.x is not None):
        x = np.asarray(res.x, dtype=float)
        x[mip.integers] = np.round(x[mip.integers])
        bound = getattr(res, "mip_dual_bound", None)
        obj = float(lp.c @ x)
        g = 0.0 if res.status == 0 else (abs(obj - bound) if bound is not None else np.inf)
        return PrimalDualSolution(status="optimal" if res.status == 0 else "node_limit",
                                  x=x, objective=obj, gap=g,
                                  nodes=int(getattr(res, "mip_node_count", 0) or 0),
                                  message=res.message)
    if res.status == 2:
        return PrimalDualSolution(status="infeasible", message=res.message)
    if res.status == 3:
        return PrimalDualSolution(status="unbounded", message=res.message)
    return PrimalDualSolution(status="error", message=res.message)
