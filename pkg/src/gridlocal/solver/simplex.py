"""Dense bounded-variable revised simplex.

The problem ``min c.x, row_lo <= A x <= row_hi, lo <= x <= hi`` is put in
equality form with one logical per row, ``A x - s = 0``, where ``s`` carries
the row range as its bounds.  Phase I adds artificials only for rows whose
logical starts out of range.  Pricing is Dantzig (lowest index on ties) and
switches to Bland's rule after a run of degenerate pivots.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .lp import LinearProgram, Solution

TOL_PIVOT = 1e-9
TOL_DUAL = 1e-9
TOL_FEAS = 1e-9
DEGENERATE_RUN = 50


class _Tableau:
    def __init__(self, m_full, cost, lo, hi, basis, x):
        self.m = m_full
        self.cost = cost
        self.lo = lo
        self.hi = hi
        self.basis = list(basis)
        self.x = x
        self.iterations = 0
        self.bland = False

    def _recompute(self):
        is_basic = np.zeros(self.m.shape[1], dtype=bool)
        is_basic[self.basis] = True
        nb = ~is_basic
        rhs = -self.m[:, nb] @ self.x[nb]
        self.lu = sla.lu_factor(self.m[:, self.basis])
        self.x[self.basis] = sla.lu_solve(self.lu, rhs)
        return nb

    def duals(self):
        return sla.lu_solve(self.lu, self.cost[self.basis], trans=1)

    def run(self, max_iter):
        """Iterate to optimality. Returns 'optimal', 'unbounded' or 'iteration-limit'."""
        degenerate = 0
        while True:
            nb = self._recompute()
            y = self.duals()
            d = self.cost - y @ self.m
            at_lo = nb & (self.x <= self.lo + TOL_FEAS)
            at_hi = nb & (self.x >= self.hi - TOL_FEAS)
            fixed = self.hi - self.lo <= TOL_FEAS
            free_mid = nb & ~at_lo & ~at_hi
            inc = ((at_lo & ~at_hi) | free_mid) & (d < -TOL_DUAL) & ~fixed
            dec = ((at_hi & ~at_lo) | free_mid) & (d > TOL_DUAL) & ~fixed
            elig = inc | dec
            if not elig.any():
                return "optimal"
            if self.iterations >= max_iter:
                return "iteration-limit"
            self.iterations += 1
            cand = np.flatnonzero(elig)
            if self.bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if inc[j] else -1.0
            w = sla.lu_solve(self.lu, self.m[:, j]) * direction
            # x_B(theta) = x_B - theta * w
            theta = self.hi[j] - self.lo[j]
            leave = -1
            leave_to = 0.0
            basis = np.array(self.basis)
            xb = self.x[basis]
            order = np.argsort(basis, kind="stable")  # lowest column index wins ties
            for i in order:
                wi = w[i]
                if wi > TOL_PIVOT:
                    lim = (xb[i] - self.lo[basis[i]]) / wi
                    bound = self.lo[basis[i]]
                elif wi < -TOL_PIVOT:
                    lim = (self.hi[basis[i]] - xb[i]) / -wi
                    bound = self.hi[basis[i]]
                else:
                    continue
                lim = max(lim, 0.0)
                if lim < theta - 1e-12:
                    theta, leave, leave_to = lim, i, bound
            if not np.isfinite(theta):
                return "unbounded"
            if theta < 1e-12:
                degenerate += 1
                if degenerate > DEGENERATE_RUN:
                    self.bland = True
            else:
                degenerate = 0
            self.x[j] += direction * theta
            self.x[basis] = xb - theta * w
            if leave >= 0:
                out = self.basis[leave]
                self.x[out] = leave_to
                self.basis[leave] = j


def _initial_point(lo, hi):
    x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    return x.astype(float)


def solve_lp_native(lp: LinearProgram, max_iter=None, lo=None, hi=None):
    """Solve ``lp`` with the built-in simplex.

    ``lo``/``hi`` override the variable bounds (used by branch-and-bound).
    Duals ``y`` satisfy ``c - A^T y = reduced costs``; they are the row
    multipliers of the optimal basis.
    """
    c, a, rlo, rhi, vlo, vhi = lp.arrays()
    if lo is not None:
        vlo = np.asarray(lo, dtype=float)
    if hi is not None:
        vhi = np.asarray(hi, dtype=float)
    n = len(c)
    m = a.shape[0]
    if np.any(vlo > vhi + 1e-12) or np.any(rlo > rhi + 1e-12):
        return Solution("infeasible", np.full(n, np.nan), np.nan, message="empty bound range")
    a = a.toarray()
    max_iter = max_iter or 50 * (n + m) + 100
    if m == 0:
        x = np.where(c > 0, vlo, np.where(c < 0, vhi, _initial_point(vlo, vhi)))
        if not np.all(np.isfinite(x)):
            return Solution("unbounded", x, -np.inf)
        return Solution("optimal", x, float(c @ x + lp.offset), np.zeros(0))

    x = np.concatenate([_initial_point(vlo, vhi), np.zeros(m)])
    s0 = a @ x[:n]
    art_sign = np.zeros(m)
    s_val = s0.copy()
    for i in range(m):
        if s0[i] < rlo[i] - TOL_FEAS:
            s_val[i] = rlo[i]
            art_sign[i] = 1.0
        elif s0[i] > rhi[i] + TOL_FEAS:
            s_val[i] = rhi[i]
            art_sign[i] = -1.0
    x[n:] = s_val
    arts = np.flatnonzero(art_sign)
    n_art = len(arts)
    m_full = np.zeros((m, n + m + n_art))
    m_full[:, :n] = a
    m_full[:, n:n + m] = -np.eye(m)
    for k, i in enumerate(arts):
        m_full[i, n + m + k] = art_sign[i]
    lo_full = np.concatenate([vlo, rlo, np.zeros(n_art)])
    hi_full = np.concatenate([vhi, rhi, np.full(n_art, np.inf)])
    x = np.concatenate([x, np.zeros(n_art)])
    basis = [n + i for i in range(m)]
    for k, i in enumerate(arts):
        basis[i] = n + m + k

    iterations = 0
    if n_art:
        cost1 = np.zeros(n + m + n_art)
        cost1[n + m:] = 1.0
        tab = _Tableau(m_full, cost1, lo_full, hi_full, basis, x)
        status = tab.run(max_iter)
        iterations = tab.iterations
        if status == "iteration-limit":
            return Solution(status, tab.x[:n], np.nan, iterations=iterations)
        infeas = float(np.sum(tab.x[n + m:]))
        if infeas > 1e-7 * max(1.0, np.max(np.abs(a))):
            return Solution("infeasible", tab.x[:n], np.nan, iterations=iterations,
                            message=f"phase I residual {infeas:.3e}")
        basis, x = tab.basis, tab.x
        x[n + m:] = 0.0
        hi_full[n + m:] = 0.0

    cost2 = np.concatenate([c, np.zeros(m + n_art)])
    tab = _Tableau(m_full, cost2, lo_full, hi_full, basis, x)
    status = tab.run(max_iter - iterations)
    iterations += tab.iterations
    tab._recompute()
    xs = tab.x[:n].copy()
    if status != "optimal":
        return Solution(status, xs, -np.inf if status == "unbounded" else np.nan,
                        iterations=iterations)
    y = tab.duals()
    return Solution("optimal", xs, float(c @ xs + lp.offset), y, iterations)
