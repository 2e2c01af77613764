"""Adapter to the HiGHS solver shipped with scipy."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .lp import IntegerSpec, LinearProgram, Solution

_STATUS = {0: "optimal", 1: "iteration-limit", 2: "infeasible", 3: "unbounded", 4: "iteration-limit"}


def solve_lp_highs(lp: LinearProgram, lo=None, hi=None, time_limit=None):
    """LP via ``scipy.optimize.linprog`` (HiGHS), with row duals."""
    c, a, rlo, rhi, vlo, vhi = lp.arrays()
    if lo is not None:
        vlo = np.asarray(lo, dtype=float)
    if hi is not None:
        vhi = np.asarray(hi, dtype=float)
    eq = rlo == rhi
    ub_hi = np.isfinite(rhi) & ~eq
    ub_lo = np.isfinite(rlo) & ~eq
    a_ub = sp.vstack([a[ub_hi], -a[ub_lo]]) if (ub_hi.any() or ub_lo.any()) else None
    b_ub = np.concatenate([rhi[ub_hi], -rlo[ub_lo]]) if a_ub is not None else None
    opts = {"presolve": True}
    if time_limit:
        opts["time_limit"] = time_limit
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a[eq] if eq.any() else None,
                  b_eq=rlo[eq] if eq.any() else None, bounds=np.column_stack([vlo, vhi]),
                  method="highs", options=opts)
    status = _STATUS.get(res.status, "infeasible")
    if status != "optimal":
        return Solution(status, np.full(len(c), np.nan), np.nan, message=res.message)
    duals = np.zeros(a.shape[0])
    if eq.any():
        duals[eq] = res.eqlin.marginals
    if a_ub is not None:
        m_ub = res.ineqlin.marginals
        k = int(ub_hi.sum())
        duals[ub_hi] += m_ub[:k]
        duals[ub_lo] -= m_ub[k:]
    return Solution("optimal", res.x, float(res.fun + lp.offset), duals, int(res.nit))


def solve_milp_highs(lp: LinearProgram, ints: IntegerSpec | None = None, time_limit=None,
                     check_cap=True, mip_rel_gap=1e-9):
    """MILP via ``scipy.optimize.milp``; no duals are returned."""
    c, a, rlo, rhi, vlo, vhi = lp.arrays()
    integrality = np.zeros(len(c))
    if ints is not None:
        if check_cap:
            ints.validate(lp)
        integrality[ints.variables] = 1
        # HiGHS can return a wrong optimum when integer columns have fractional bounds
        idx = np.asarray(ints.variables, dtype=int)
        vlo, vhi = vlo.copy(), vhi.copy()
        vlo[idx] = np.ceil(vlo[idx] - 1e-9)
        vhi[idx] = np.floor(vhi[idx] + 1e-9)
        if np.any(vlo[idx] > vhi[idx]):
            return Solution("infeasible", np.full(len(c), np.nan), np.nan, message="empty integer range")
    opts = {"disp": False, "presolve": True, "mip_rel_gap": mip_rel_gap}
    if time_limit:
        opts["time_limit"] = time_limit
    cons = [LinearConstraint(a, rlo, rhi)] if a.shape[0] else []
    res = milp(c, constraints=cons, integrality=integrality, bounds=Bounds(vlo, vhi),
               options=opts)
    status = _STATUS.get(res.status, "infeasible")
    if res.x is None:
        return Solution(status if status != "optimal" else "infeasible",
                        np.full(len(c), np.nan), np.nan, message=res.message)
    x = np.array(res.x)
    if ints is not None and ints.variables:
        x[ints.variables] = np.round(x[ints.variables])
    gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
    return Solution(status, x, float(res.fun + lp.offset), None, 0, gap, res.message)
