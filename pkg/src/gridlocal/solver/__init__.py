"""Linear and mixed-integer programming.

Two interchangeable back ends are provided: a native dense revised simplex
with branch-and-bound (``backend="native"``), and HiGHS through scipy
(``backend="highs"``).  ``"auto"`` picks the native solver for small problems.
"""
from __future__ import annotations

from ..errors import ValidationError
from .bnb import solve_milp_native
from .highs import solve_lp_highs, solve_milp_highs
from .lp import EQ, GE, LE, IntegerSpec, LinearProgram, Solution
from .polygon import max_under_coverage, polygon_normals, polygonize_quadratic
from .simplex import solve_lp_native
from .textio import read_lp_text, write_lp_text

NATIVE_SIZE_LIMIT = 400  # rows + columns


def _pick(lp, backend):
    if backend == "auto":
        return "native" if lp.n_vars + lp.n_rows <= NATIVE_SIZE_LIMIT else "highs"
    if backend not in ("native", "highs"):
        raise ValidationError(f"unknown solver backend {backend!r}")
    return backend


def solve_lp(lp: LinearProgram, backend="native"):
    """Solve an LP; infeasible or unbounded problems are reported via ``status``."""
    if _pick(lp, backend) == "native":
        return solve_lp_native(lp)
    return solve_lp_highs(lp)


def solve_milp(lp: LinearProgram, ints: IntegerSpec, backend="native", node_limit=10_000):
    """Solve a MILP by branch-and-bound (native) or HiGHS."""
    if _pick(lp, backend) == "native":
        return solve_milp_native(lp, ints, node_limit=node_limit)
    return solve_milp_highs(lp, ints)


__all__ = [
    "EQ", "GE", "LE", "IntegerSpec", "LinearProgram", "Solution", "solve_lp", "solve_milp",
    "solve_lp_native", "solve_milp_native", "solve_lp_highs", "solve_milp_highs",
    "polygonize_quadratic", "polygon_normals", "max_under_coverage",
    "read_lp_text", "write_lp_text",
]
