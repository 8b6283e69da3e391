"""Best-bound branch and bound on top of the revised simplex."""

from __future__ import annotations

import heapq
import logging

import numpy as np

from .model import LPError, MixedIntegerProgram, PrimalDualSolution
from .simplex import simplex

log = logging.getLogger(__name__)

INT_TOL = 1e-6


def _is_feasible(mip: MixedIntegerProgram, x, tol=1e-6):
    lp = mip.lp
    if x is None or x.shape != lp.c.shape:
        return False
    lo, hi = lp.row_bounds()
    r = lp.A @ x
    if np.any(r < lo - tol) or np.any(r > hi + tol):
        return False
    if np.any(x < lp.lb - tol) or np.any(x > lp.ub + tol):
        return False
    xi = x[mip.integers]
    return bool(np.all(np.abs(xi - np.round(xi)) <= tol))


def _cutoff(best_obj, tol, step=0.0):
    # inf - tol * inf is NaN, and comparing against NaN would prune every child
    if not np.isfinite(best_obj):
        return best_obj
    if step > 0:
        # only nodes that can reach the next lattice value below the incumbent survive
        target = step * np.ceil(best_obj / step - 1e-9) - step
        return target + tol * (1 + abs(target)) + 1e-9 * step
    return best_obj - tol * (1 + abs(best_obj))


def branch_and_bound(mip: MixedIntegerProgram, node_limit=1_000_000, incumbent=None,
                     tol=1e-9):
    """Solve ``mip`` to proven optimality or until ``node_limit`` nodes.

    Nodes are explored best bound first; the branching variable is the most
    fractional integer column (lowest index on ties).  ``incumbent`` is an
    optional feasible starting point.  The returned ``gap`` is the absolute
    difference between the incumbent and the best open bound (0 when proven).
    """
    lp = mip.lp
    ints = mip.integers
    step = mip.objective_step
    best_x, best_obj = None, np.inf
    if incumbent is not None:
        x0 = np.asarray(incumbent, dtype=float)
        if _is_feasible(mip, x0):
            best_x, best_obj = x0.copy(), float(lp.c @ x0)
        else:
            log.warning("supplied incumbent is infeasible; ignored")

    root = simplex(lp)
    if root.status == "unbounded":
        return PrimalDualSolution(status="unbounded", nodes=1)
    if root.status != "optimal":
        status = "optimal" if best_x is not None else "infeasible"
        return PrimalDualSolution(status=status, x=best_x, objective=best_obj, nodes=1)

    # heap entries: (bound, seq, lb, ub, parent solution)
    seq = 0
    heap = [(root.objective, seq, lp.lb.copy(), lp.ub.copy(), root)]
    nodes = 0
    while heap:
        bound, _, lb, ub, sol = heapq.heappop(heap)
        if bound >= _cutoff(best_obj, tol, step):
            continue
        nodes += 1
        if nodes > node_limit:
            heapq.heappush(heap, (bound, seq, lb, ub, sol))
            break
        xi = sol.x[ints]
        frac = np.abs(xi - np.round(xi))
        if frac.max(initial=0.0) <= INT_TOL:
            x = sol.x.copy()
            x[ints] = np.round(xi)
            best_x, best_obj = x, float(lp.c @ x)
            continue
        k = int(np.argmax(frac))
        j = ints[k]
        lo_val, hi_val = np.floor(sol.x[j]), np.ceil(sol.x[j])
        for side in (0, 1):
            lb2, ub2 = lb.copy(), ub.copy()
            if side == 0:
                ub2[j] = lo_val
            else:
                lb2[j] = hi_val
            if lb2[j] > ub2[j]:
                continue
            child = simplex(lp.with_bounds(lb2, ub2), basis=sol.basis,
                            state=getattr(sol, "state", None))
            if child.status == "optimal" and child.objective < _cutoff(best_obj, tol, step):
                seq += 1
                heapq.heappush(heap, (child.objective, seq, lb2, ub2, child))
            elif child.status not in ("optimal", "infeasible"):
                raise LPError(f"node relaxation ended with status {child.status}")

    if best_x is None:
        return PrimalDualSolution(status="infeasible" if not heap else "node_limit",
                                  nodes=nodes)
    heap = [h for h in heap if h[0] < _cutoff(best_obj, tol, step)]
    open_bound = min((h[0] for h in heap), default=best_obj)
    gap = max(0.0, best_obj - open_bound)
    status = "optimal" if not heap else "node_limit"
    return PrimalDualSolution(status=status, x=best_x, objective=best_obj, gap=gap,
                              nodes=nodes)
