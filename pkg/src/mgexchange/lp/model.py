"""Problem and solution containers for the linear programming core."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

GE, LE, EQ = ">=", "<=", "=="
SENSES = (GE, LE, EQ)


class LPError(Exception):
    """Base class for solver errors."""


class NumericalFailure(LPError):
    """Raised when the simplex cannot make progress within its iteration cap."""


@dataclass
class LinearProgram:
    """``min c.x  s.t.  A x (sense) rhs,  lb <= x <= ub``.

    Row senses use the strings ``">="``, ``"<="`` and ``"=="``.  Bounds may be
    infinite.  Names are optional tags used to look up duals after a solve.
    """

    c: np.ndarray
    A: sp.csr_matrix
    senses: list
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    var_names: list = field(default_factory=list)
    row_names: list = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        self.senses = list(self.senses)
        m, n = self.A.shape
        if self.A.shape == (0, 0) and self.c.size:
            self.A = sp.csr_matrix((0, self.c.size))
            m, n = self.A.shape
        if not (self.c.size == n == self.lb.size == self.ub.size):
            raise ValueError("column dimensions are inconsistent")
        if not (self.rhs.size == m == len(self.senses)):
            raise ValueError("row dimensions are inconsistent")
        if any(s not in SENSES for s in self.senses):
            raise ValueError(f"row senses must be one of {SENSES}")
        if not np.all(np.isfinite(self.c)) or not np.all(np.isfinite(self.rhs)):
            raise ValueError("objective and right-hand side must be finite")
        if np.isnan(self.A.data).any() or np.isnan(self.lb).any() or np.isnan(self.ub).any():
            raise ValueError("NaN in problem data")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound above upper bound")
        if not self.var_names:
            self.var_names = [f"x{j}" for j in range(n)]
        if not self.row_names:
            self.row_names = [f"r{i}" for i in range(m)]
        if len(self.var_names) != n or len(self.row_names) != m:
            raise ValueError("name lists do not match dimensions")

    @property
    def shape(self):
        return self.A.shape

    def row_index(self, name):
        return self._row_lookup()[name]

    def var_index(self, name):
        return self._var_lookup()[name]

    def _row_lookup(self):
        if getattr(self, "_rows", None) is None:
            self._rows = {nm: i for i, nm in enumerate(self.row_names)}
        return self._rows

    def _var_lookup(self):
        if getattr(self, "_vars", None) is None:
            self._vars = {nm: j for j, nm in enumerate(self.var_names)}
        return self._vars

    def row_bounds(self):
        """Row activity bounds ``(lo, hi)`` implied by senses and rhs."""
        lo = np.full(self.rhs.size, -np.inf)
        hi = np.full(self.rhs.size, np.inf)
        s = np.array(self.senses, dtype=object)
        ge, le, eq = s == GE, s == LE, s == EQ
        lo[ge | eq] = self.rhs[ge | eq]
        hi[le | eq] = self.rhs[le | eq]
        return lo, hi

    def with_bounds(self, lb=None, ub=None):
        """Copy sharing the matrix, with replaced variable bounds."""
        return LinearProgram(
            self.c, self.A, self.senses, self.rhs,
            self.lb if lb is None else lb, self.ub if ub is None else ub,
            self.var_names, self.row_names)


@dataclass
class PrimalDualSolution:
    """Result of a solve.

    ``y`` holds one dual per row in the ">=" normalised form: a ``<=`` row is
    read as ``-a.x >= -rhs``.  Inequality duals are therefore nonnegative at
    an optimum of a minimisation, and ``y[i]`` is the objective increase per
    unit tightening of row ``i``.  Equality duals are ``d obj / d rhs``.
    ``reduced_costs`` are ``c - A^T y_raw`` where ``y_raw`` are the
    unnormalised multipliers, so that ``c.x = y_raw.rhs + rc.x`` at a vertex.
    """

    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    basis: np.ndarray | None = None
    ray: np.ndarray | None = None
    gap: float = 0.0
    nodes: int = 0
    message: str = ""

    @property
    def optimal(self):
        return self.status == "optimal"

    def dual(self, lp: LinearProgram, row_name):
        return self.y[lp.row_index(row_name)]

    def value(self, lp: LinearProgram, var_name):
        return self.x[lp.var_index(var_name)]


@dataclass
class MixedIntegerProgram:
    """A linear program plus a set of integer-restricted columns.

    Integer columns take values in ``{lb, ..., ub}``; for this project these
    are the domains ``{0, 1}`` and ``{-1, 0}``.  ``objective_step > 0`` declares
    that every optimal value is a multiple of it, so a bound within one step of
    the incumbent proves optimality.
    """

    lp: LinearProgram
    integers: np.ndarray
    objective_step: float = 0.0

    def __post_init__(self):
        self.integers = np.asarray(self.integers, dtype=int)
        n = self.lp.c.size
        if self.integers.size and (self.integers.min() < 0 or self.integers.max() >= n):
            raise ValueError("integer index out of range")
        lb, ub = self.lp.lb[self.integers], self.lp.ub[self.integers]
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
            raise ValueError("integer columns need finite bounds")
        if not self.objective_step >= 0:
            raise ValueError("objective_step must be nonnegative")


def raw_multipliers(lp: LinearProgram, y):
    """Undo the ">=" normalisation: return ``d obj / d rhs`` per row."""
    s = np.array(lp.senses, dtype=object)
    out = np.array(y, dtype=float)
    out[s == LE] *= -1.0
    return out


def kkt_residuals(lp: LinearProgram, sol: PrimalDualSolution):
    """Primal, dual and complementarity residuals plus the duality gap.

    Everything is recomputed from ``lp`` and the returned vectors so the
    check is independent of solver internals.
    """
    x, y = sol.x, sol.y
    r = lp.A @ x
    lo, hi = lp.row_bounds()
    p_row = np.maximum(lo - r, 0) + np.maximum(r - hi, 0)
    p_col = np.maximum(lp.lb - x, 0) + np.maximum(x - lp.ub, 0)

    yr = raw_multipliers(lp, y)
    s = np.array(lp.senses, dtype=object)
    # dual sign: ">=" normalised duals of inequality rows are nonnegative
    d_row = np.where(s == EQ, 0.0, np.maximum(-y, 0))
    d = lp.c - lp.A.T @ yr
    # reduced cost sign per active bound: d >= 0 at lb, d <= 0 at ub
    d_col = np.where(np.isinf(lp.lb), np.maximum(d, 0), 0.0) + \
        np.where(np.isinf(lp.ub), np.maximum(-d, 0), 0.0)

    slack_row = np.where(s == EQ, 0.0, np.abs(r - lp.rhs))
    cs_row = np.abs(y * slack_row)
    to_lb = np.abs(x - lp.lb)
    to_ub = np.abs(lp.ub - x)
    dist = np.where(d > 0, to_lb, to_ub)
    dist = np.where(np.isfinite(dist), dist, 0.0)
    cs_col = np.abs(d) * dist

    primal_obj = float(lp.c @ x)
    bound_val = np.where(d > 0, lp.lb, lp.ub)
    bound_val = np.where(np.isfinite(bound_val), bound_val, x)
    dual_obj = float(yr @ lp.rhs + d @ bound_val)
    return {
        "primal": float(max(p_row.max(initial=0), p_col.max(initial=0))),
        "dual": float(max(d_row.max(initial=0), d_col.max(initial=0))),
        "cs_row": float(cs_row.max(initial=0)),
        "cs_col": float(cs_col.max(initial=0)),
        "primal_obj": primal_obj,
        "dual_obj": dual_obj,
        "gap": abs(primal_obj - dual_obj),
    }
