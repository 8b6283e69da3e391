"""Bounded-variable revised primal simplex with primal-dual certificates.

The problem ``min c.x, A x (sense) rhs, lb <= x <= ub`` is solved in the
internal form ``[A  -I] [x; r] = 0`` where the row activities ``r`` carry the
row bounds.  The slack basis ``B = -I`` is always a valid start, equality rows
need no special treatment and every row keeps exactly one multiplier.

Linear algebra: a sparse LU of the basis (``scipy.sparse.linalg.splu``)
refreshed every ``refactor`` pivots, with product-form eta updates in between.
Pricing is Dantzig on column-scaled reduced costs; the ratio test is the
two-pass Harris test.  After ``bland_after`` consecutive degenerate pivots the
solver switches to Bland's rule until it makes progress again.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import EQ, LE, LinearProgram, NumericalFailure, PrimalDualSolution

log = logging.getLogger(__name__)

PTOL = 1e-9    # primal feasibility, absolute, on scaled quantities
DTOL = 1e-9    # reduced-cost optimality
PIVTOL = 1e-9  # smallest acceptable pivot magnitude (relative)

AT_LB, AT_UB, FREE, BASIC = 0, 1, 2, 3


class _Factor:
    """LU of the basis matrix plus an eta file."""

    def __init__(self, Bmat):
        self.m = Bmat.shape[0]
        try:
            self.lu = spla.splu(sp.csc_matrix(Bmat), permc_spec="COLAMD",
                                options={"SymmetricMode": False})
        except RuntimeError as exc:
            raise NumericalFailure(f"singular basis: {exc}") from exc
        self.etas = []  # (pivot row, column alpha)

    def ftran(self, b):
        x = self.lu.solve(b)
        for p, a in self.etas:
            xp = x[p] / a[p]
            if xp != 0.0:
                x -= xp * a
            x[p] = xp
        return x

    def btran(self, c):
        y = np.array(c, dtype=float)
        for p, a in reversed(self.etas):
            ap = a[p]
            y[p] = (y[p] - (a @ y - ap * y[p])) / ap
        return self.lu.solve(y, trans="T")

    def push(self, p, alpha):
        self.etas.append((p, alpha.copy()))


class _Simplex:
    def __init__(self, lp: LinearProgram, basis=None, refactor=64, bland_after=1000,
                 max_iter=None, state=None):
        m, n = lp.A.shape
        self.m, self.n = m, n
        self.lp = lp
        A = sp.csc_matrix(lp.A)
        self.A = A
        self.Afull = sp.hstack([A, -sp.identity(m, format="csc")], format="csc")
        self.AfullT = sp.csr_matrix(self.Afull.T)
        rlo, rhi = lp.row_bounds()
        self.lo = np.concatenate([lp.lb, rlo])
        self.hi = np.concatenate([lp.ub, rhi])
        self.cost = np.concatenate([lp.c, np.zeros(m)])
        self.colnorm = np.sqrt(np.asarray(self.Afull.multiply(self.Afull).sum(axis=0)).ravel())
        self.colnorm[self.colnorm == 0] = 1.0
        self.refactor_every = refactor
        self.bland_after = bland_after
        self.max_iter = max_iter if max_iter is not None else 50 * (m + n)
        self.scale = max(1.0, float(np.max(np.abs(self.lo[np.isfinite(self.lo)]), initial=0)),
                         float(np.max(np.abs(self.hi[np.isfinite(self.hi)]), initial=0)))
        self.ptol = PTOL * self.scale
        self.iters = 0
        self._init_basis(basis, state)

    # -- setup ---------------------------------------------------------
    def _init_basis(self, basis, state):
        m, n = self.m, self.n
        N = n + m
        self.z = np.zeros(N)
        self.state = np.full(N, FREE)
        lo, hi = self.lo, self.hi
        if basis is None or len(basis) != m:
            basis, state = np.arange(n, n + m), None
        for j in range(N):
            hint = 0.0
            if state is not None:
                if state[j] == AT_LB and np.isfinite(lo[j]):
                    hint = lo[j]
                elif state[j] == AT_UB and np.isfinite(hi[j]):
                    hint = hi[j]
            self._place_nonbasic(j, hint)
        self.basis = np.array(basis, dtype=int)
        self.state[self.basis] = BASIC
        self._factor()
        self._recompute_xb()

    def _place_nonbasic(self, j, hint):
        lo, hi = self.lo[j], self.hi[j]
        if np.isfinite(lo) and np.isfinite(hi):
            if lo == hi:
                v, st = lo, AT_LB
            elif abs(hint - lo) <= abs(hi - hint):
                v, st = lo, AT_LB
            else:
                v, st = hi, AT_UB
        elif np.isfinite(lo):
            v, st = lo, AT_LB
        elif np.isfinite(hi):
            v, st = hi, AT_UB
        else:
            v, st = 0.0, FREE
        self.z[j] = v
        self.state[j] = st

    def _factor(self):
        Bmat = self.Afull[:, self.basis]
        try:
            self.F = _Factor(Bmat)
        except NumericalFailure:
            self._repair_basis()
            self.F = _Factor(self.Afull[:, self.basis])

    def _repair_basis(self):
        """Swap numerically dependent basis columns for unused slacks."""
        Bd = self.Afull[:, self.basis].toarray()
        _, r = np.linalg.qr(Bd)
        weak = np.where(np.abs(np.diag(r)) < 1e-10)[0]
        used = set(self.basis.tolist())
        rows = [i for i in range(self.m) if self.n + i not in used]
        for pos, row in zip(weak, rows):
            j = self.basis[pos]
            self._place_nonbasic(j, self.z[j])
            self.basis[pos] = self.n + row
            self.state[self.n + row] = BASIC
        log.debug("repaired %d basis columns", len(weak))

    def _recompute_xb(self):
        zN = self.z.copy()
        zN[self.basis] = 0.0
        rhs = -(self.Afull @ zN)
        self.z[self.basis] = self.F.ftran(rhs)

    # -- core loop -----------------------------------------------------
    def _infeasibility(self):
        zb = self.z[self.basis]
        lo, hi = self.lo[self.basis], self.hi[self.basis]
        below = lo - zb > self.ptol
        above = zb - hi > self.ptol
        return below, above

    def run(self):
        """Two-phase driver.  Returns a status string."""
        for _ in range(3):
            st = self._phase(1)
            if st != "optimal":
                return st
            below, above = self._infeasibility()
            if below.any() or above.any():
                return "infeasible"
            st = self._phase(2)
            if st != "optimal":
                return st
            self._factor()
            self._recompute_xb()
            below, above = self._infeasibility()
            if not (below.any() or above.any()) and self._dual_ok():
                return "optimal"
        return "optimal"

    def _dual_ok(self):
        d = self._reduced_costs(self._duals(self.cost[self.basis]), self.cost)
        d[self.basis] = 0.0
        return self._choose_entering(d, bland=False) is None

    def _duals(self, cb):
        return self.F.btran(cb)

    def _reduced_costs(self, y, cost):
        return cost - self.AfullT @ y

    def _phase_cost(self, phase):
        if phase == 2:
            return self.cost, self.cost[self.basis]
        below, above = self._infeasibility()
        cb = np.zeros(self.m)
        cb[below] = -1.0
        cb[above] = 1.0
        return None, cb

    def _choose_entering(self, d, bland):
        st, z = self.state, self.z
        movable = self.hi > self.lo
        up = movable & (d < -DTOL) & (((st == AT_LB)) | ((st == FREE) & (z < self.hi)))
        dn = movable & (d > DTOL) & (((st == AT_UB)) | ((st == FREE) & (z > self.lo)))
        cand = up | dn
        if not cand.any():
            return None
        if bland:
            q = int(np.flatnonzero(cand)[0])
        else:
            score = np.where(cand, np.abs(d) / self.colnorm, -1.0)
            q = int(np.argmax(score))
        dirn = 1.0 if d[q] < 0 else -1.0
        return q, dirn

    def _ratio(self, alpha, dirn, q, phase, bland):
        """Harris two-pass ratio test.  ``delta`` is dz_B per unit step."""
        delta = -dirn * alpha
        zb = self.z[self.basis]
        lo, hi = self.lo[self.basis], self.hi[self.basis]
        big = np.max(np.abs(delta), initial=0.0)
        piv = PIVTOL * max(1.0, big)
        dec = delta < -piv
        inc = delta > piv
        if phase == 1:
            below = lo - zb > self.ptol
            above = zb - hi > self.ptol
            # infeasible basics block at the bound they are violating
            bound_dec = np.where(above, hi, lo)
            bound_inc = np.where(below, lo, hi)
            dec &= ~below
            inc &= ~above
        else:
            bound_dec, bound_inc = lo, hi
        with np.errstate(invalid="ignore", divide="ignore"):
            room = np.full(self.m, np.inf)
            room[dec] = (zb[dec] - bound_dec[dec]) / -delta[dec]
            room[inc] = (bound_inc[inc] - zb[inc]) / delta[inc]
        room[~np.isfinite(room)] = np.inf
        flip = self.hi[q] - self.lo[q]
        if not np.isfinite(flip):
            flip = np.inf
        if self.state[q] == FREE or (self.lo[q] < self.z[q] < self.hi[q]):
            flip = (self.hi[q] - self.z[q]) if dirn > 0 else (self.z[q] - self.lo[q])
            if not np.isfinite(flip):
                flip = np.inf
        if not np.isfinite(room).any():
            return (None, flip) if np.isfinite(flip) else (None, None)
        if bland:
            t = room.min()
            ties = np.flatnonzero(room <= t + 1e-12)
            p = int(ties[np.argmin(self.basis[ties])])
            t = max(room[p], 0.0)
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                relaxed = np.full(self.m, np.inf)
                relaxed[dec] = (zb[dec] - bound_dec[dec] + self.ptol) / -delta[dec]
                relaxed[inc] = (bound_inc[inc] - zb[inc] + self.ptol) / delta[inc]
            tmax = relaxed.min()
            ok = np.flatnonzero(room <= tmax)
            if ok.size == 0:
                ok = np.array([int(np.argmin(room))])
            p = int(ok[np.argmax(np.abs(delta[ok]))])
            t = max(room[p], 0.0)
        if flip <= t:
            return None, flip
        return p, t

    def _phase(self, phase):
        degenerate = 0
        bland = False
        since_factor = 0
        while True:
            if self.iters >= self.max_iter:
                raise NumericalFailure(f"iteration cap {self.max_iter} reached")
            cost_full, cb = self._phase_cost(phase)
            if phase == 1 and not cb.any():
                return "optimal"
            y = self._duals(cb)
            if phase == 1:
                d = -(self.AfullT @ y)
            else:
                d = self._reduced_costs(y, cost_full)
            d[self.basis] = 0.0
            choice = self._choose_entering(d, bland)
            if choice is None:
                self.y = y
                self.d = d
                return "optimal"
            q, dirn = choice
            alpha = self.F.ftran(self.Afull[:, q].toarray().ravel())
            p, t = self._ratio(alpha, dirn, q, phase, bland)
            self.iters += 1
            if p is None and t is None:
                if phase == 1:
                    raise NumericalFailure("unbounded phase-1 direction")
                ray = np.zeros(self.n + self.m)
                ray[q] = dirn
                ray[self.basis] = -dirn * alpha
                self.ray = ray[: self.n]
                return "unbounded"
            if p is None:
                # bound flip of the entering variable
                self.z[q] += dirn * t
                self.z[self.basis] -= dirn * t * alpha
                self.state[q] = AT_UB if dirn > 0 else AT_LB
                if np.isfinite(self.hi[q]) and dirn > 0:
                    self.z[q] = self.hi[q]
                if np.isfinite(self.lo[q]) and dirn < 0:
                    self.z[q] = self.lo[q]
                degenerate = 0
                bland = False
                continue
            if t * abs(alpha[p]) <= 1e-12 * self.scale:
                degenerate += 1
                if degenerate > self.bland_after and not bland:
                    log.debug("switching to Bland's rule at iteration %d", self.iters)
                    bland = True
            else:
                degenerate = 0
                bland = False
            self.z[q] += dirn * t
            self.z[self.basis] -= dirn * t * alpha
            leave = self.basis[p]
            delta_p = -dirn * alpha[p]
            lo_p, hi_p = self.lo[leave], self.hi[leave]
            if phase == 1:
                zp = self.z[leave]
                target = lo_p if abs(zp - lo_p) <= abs(zp - hi_p) else hi_p
                if not np.isfinite(target):
                    target = lo_p if np.isfinite(lo_p) else hi_p
            else:
                target = lo_p if delta_p < 0 else hi_p
            if np.isfinite(target):
                self.z[leave] = target
                self.state[leave] = AT_LB if target == lo_p else AT_UB
            else:
                self.state[leave] = FREE
            self.basis[p] = q
            self.state[q] = BASIC
            self.F.push(p, alpha)
            since_factor += 1
            if since_factor >= self.refactor_every:
                self._factor()
                self._recompute_xb()
                since_factor = 0

    # -- results -------------------------------------------------------
    def solution(self, status):
        lp = self.lp
        n = self.n
        if status != "optimal":
            return PrimalDualSolution(status=status, iterations=self.iters,
                                      ray=getattr(self, "ray", None),
                                      basis=self.basis.copy())
        y_raw = self._duals(self.cost[self.basis])
        x = self.z[:n].copy()
        # snap nonbasic columns exactly onto their bounds
        nb = self.state[:n] != BASIC
        x[nb & (self.state[:n] == AT_LB)] = lp.lb[nb & (self.state[:n] == AT_LB)]
        x[nb & (self.state[:n] == AT_UB)] = lp.ub[nb & (self.state[:n] == AT_UB)]
        rc = lp.c - lp.A.T @ y_raw
        rc[self.basis[self.basis < n]] = 0.0
        y = y_raw.copy()
        s = np.array(lp.senses, dtype=object)
        y[s == LE] *= -1.0
        basic_rows = self.basis[self.basis >= n] - n
        y[basic_rows] = 0.0
        sol = PrimalDualSolution(status="optimal", x=x, y=y, reduced_costs=rc,
                                 objective=float(lp.c @ x), iterations=self.iters,
                                 basis=self.basis.copy())
        sol.state = self.state.copy()
        return sol


def simplex(lp: LinearProgram, basis=None, state=None, refactor=64, bland_after=1000,
            max_iter=None):
    """Solve ``lp`` with the revised simplex.

    ``basis``/``state`` warm-start from a previous solve of a problem with the
    same matrix (bounds may differ).  See :class:`PrimalDualSolution` for the
    dual sign convention.
    """
    m, n = lp.A.shape
    if m == 0:
        return _no_rows(lp)
    S = _Simplex(lp, basis=basis, refactor=refactor, bland_after=bland_after,
                 max_iter=max_iter, state=state)
    status = S.run()
    if status == "infeasible":
        cb = np.zeros(m)
        below, above = S._infeasibility()
        cb[below], cb[above] = -1.0, 1.0
        sol = PrimalDualSolution(status="infeasible", iterations=S.iters,
                                 basis=S.basis.copy())
        sol.ray = S._duals(cb)  # Farkas-type multipliers of the phase-1 problem
        return sol
    return S.solution(status)


def _no_rows(lp):
    x = np.where(lp.c > 0, lp.lb, np.where(lp.c < 0, lp.ub, np.clip(0.0, lp.lb, lp.ub)))
    if not np.all(np.isfinite(x)):
        return PrimalDualSolution(status="unbounded")
    return PrimalDualSolution(status="optimal", x=x, y=np.zeros(0),
                              reduced_costs=lp.c.copy(), objective=float(lp.c @ x))
