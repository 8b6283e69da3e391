from .dump import dump_lp
from .model import (EQ, GE, LE, LinearProgram, LPError, MixedIntegerProgram,
                    NumericalFailure, PrimalDualSolution, kkt_residuals)
from .simplex import simplex


def solve_lp(lp, backend="simplex", **kw):
    """Solve an LP with the native simplex (``"simplex"``) or HiGHS (``"highs"``)."""
    if backend == "simplex":
        return simplex(lp, **kw)
    if backend == "highs":
        from .highs import highs_lp
        return highs_lp(lp)
    raise ValueError(f"unknown LP backend {backend!r}")


def solve_milp(mip, backend="bnb", node_limit=1_000_000, incumbent=None, time_limit=None,
               presolve=True):
    """Solve a MILP with the native branch and bound (``"bnb"``) or HiGHS (``"highs"``)."""
    if backend == "bnb":
        from .milp import branch_and_bound
        return branch_and_bound(mip, node_limit=node_limit, incumbent=incumbent)
    if backend == "highs":
        from .highs import highs_milp
        return highs_milp(mip, time_limit=time_limit, node_limit=node_limit, presolve=presolve)
    raise ValueError(f"unknown MILP backend {backend!r}")
