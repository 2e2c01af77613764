"""Best-bound branch-and-bound over LP relaxations."""
from __future__ import annotations

import heapq
import logging

import numpy as np

from .lp import IntegerSpec, LinearProgram, Solution
from .simplex import solve_lp_native

log = logging.getLogger(__name__)

INT_TOL = 1e-6


def solve_milp_native(lp: LinearProgram, ints: IntegerSpec, node_limit=10_000, lp_solver=None):
    """Branch-and-bound on the native simplex.

    Branches on the most fractional integer variable (lowest index on ties)
    and expands the open node with the smallest relaxation bound first.
    When ``node_limit`` is hit the incumbent is returned with status
    ``iteration-limit`` and the remaining gap in ``Solution.gap``.
    """
    ints.validate(lp)
    lp_solver = lp_solver or solve_lp_native
    int_vars = np.array(ints.variables, dtype=int)
    lo0 = np.array(lp.lo, dtype=float)
    hi0 = np.array(lp.hi, dtype=float)
    lo0[int_vars] = np.ceil(lo0[int_vars] - INT_TOL)
    hi0[int_vars] = np.floor(hi0[int_vars] + INT_TOL)
    if np.any(lo0 > hi0):
        return Solution("infeasible", np.full(lp.n_vars, np.nan), np.nan,
                        message="empty integer range")

    root = lp_solver(lp, lo=lo0, hi=hi0)
    if root.status != "optimal" or int_vars.size == 0:
        return root
    best = None
    best_obj = np.inf
    counter = 0
    heap = [(root.objective, counter, lo0, hi0, root)]
    nodes = 0
    while heap:
        bound, _, lo, hi, sol = heapq.heappop(heap)
        if bound >= best_obj - 1e-9 * max(1.0, abs(best_obj)):
            continue
        nodes += 1
        if nodes > node_limit:
            heapq.heappush(heap, (bound, counter, lo, hi, sol))
            break
        frac = np.abs(sol.x[int_vars] - np.round(sol.x[int_vars]))
        if np.all(frac <= INT_TOL):
            x = sol.x.copy()
            x[int_vars] = np.round(x[int_vars])
            best, best_obj = Solution("optimal", x, sol.objective, None, nodes), sol.objective
            continue
        # most fractional: distance to nearest integer, lowest index on ties
        k = int(np.argmax(frac))
        var = int_vars[k]
        val = sol.x[var]
        for new_lo, new_hi in ((lo[var], np.floor(val)), (np.ceil(val), hi[var])):
            if new_lo > new_hi:
                continue
            lo2, hi2 = lo.copy(), hi.copy()
            lo2[var], hi2[var] = new_lo, new_hi
            child = lp_solver(lp, lo=lo2, hi=hi2)
            if child.status == "optimal" and child.objective < best_obj:
                counter += 1
                heapq.heappush(heap, (child.objective, counter, lo2, hi2, child))
            elif child.status == "unbounded":
                return child
    if best is None:
        if heap:
            return Solution("iteration-limit", root.x, np.nan, iterations=nodes, gap=np.inf,
                            message="node limit reached without an incumbent")
        return Solution("infeasible", root.x, np.nan, iterations=nodes,
                        message="no integer-feasible point")
    open_bound = min((h[0] for h in heap), default=best_obj)
    gap = max(0.0, best_obj - open_bound)
    best.iterations = nodes
    if heap and gap > 1e-9:
        log.warning("node limit %d reached, gap %.3e", node_limit, gap)
        best.status = "iteration-limit"
        best.gap = gap
    return best
