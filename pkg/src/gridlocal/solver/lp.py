"""Problem and solution containers shared by the native and HiGHS back ends."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ValidationError

LE, EQ, GE = "<=", "=", ">="
STATUSES = ("optimal", "infeasible", "unbounded", "iteration-limit")


class LinearProgram:
    """``min c.x`` subject to ``row_lo <= A x <= row_hi`` and ``lo <= x <= hi``.

    Rows are stored in range form; :meth:`add_row` accepts the usual
    relations.  Variables are created with :meth:`add_var` or in blocks with
    :meth:`add_vars`.
    """

    def __init__(self):
        self.c = []
        self.lo = []
        self.hi = []
        self.names = []
        self._blocks = []  # CSR blocks, possibly narrower than n_vars
        self._rows = []  # pending (cols, vals) not yet in a block
        self.row_lo = []
        self.row_hi = []
        self.row_names = []
        self.offset = 0.0

    # variables -------------------------------------------------------------
    @property
    def n_vars(self):
        return len(self.c)

    @property
    def n_rows(self):
        return len(self.row_lo)

    def add_var(self, name="", lo=0.0, hi=np.inf, cost=0.0):
        if not lo <= hi:
            raise ValidationError(f"variable {name}: lower bound {lo} above upper {hi}")
        self.c.append(float(cost))
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.names.append(name)
        return len(self.c) - 1

    def add_vars(self, n, prefix="", lo=0.0, hi=np.inf, cost=0.0):
        lo = np.broadcast_to(lo, (n,))
        hi = np.broadcast_to(hi, (n,))
        cost = np.broadcast_to(cost, (n,))
        start = self.n_vars
        for k in range(n):
            self.add_var(f"{prefix}[{k}]", lo[k], hi[k], cost[k])
        return np.arange(start, start + n)

    # rows ------------------------------------------------------------------
    def add_row(self, cols, vals, relation, rhs, name=""):
        cols = np.asarray(cols, dtype=int).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if cols.shape != vals.shape:
            raise ValidationError(f"row {name}: column/value length mismatch")
        if not (np.all(np.isfinite(vals)) and np.isfinite(rhs)):
            raise ValidationError(f"row {name}: non-finite coefficient")
        if relation == LE:
            lo, hi = -np.inf, rhs
        elif relation == GE:
            lo, hi = rhs, np.inf
        elif relation == EQ:
            lo = hi = rhs
        else:
            raise ValidationError(f"row {name}: unknown relation {relation!r}")
        self._rows.append((cols, vals))
        self.row_lo.append(float(lo))
        self.row_hi.append(float(hi))
        self.row_names.append(name)
        return self.n_rows - 1

    def add_range_row(self, cols, vals, lo, hi, name=""):
        if lo > hi:
            raise ValidationError(f"row {name}: empty range")
        self._rows.append((np.asarray(cols, dtype=int).ravel(),
                           np.asarray(vals, dtype=float).ravel()))
        self.row_lo.append(float(lo))
        self.row_hi.append(float(hi))
        self.row_names.append(name)
        return self.n_rows - 1

    def add_block(self, matrix, lo, hi, name=""):
        """Append a block of rows ``lo <= M x <= hi``; ``M`` may have fewer columns."""
        m = sp.csr_matrix(matrix)
        if m.shape[1] > self.n_vars:
            raise ValidationError(f"block {name}: {m.shape[1]} columns for {self.n_vars} variables")
        if m.nnz and not np.all(np.isfinite(m.data)):
            raise ValidationError(f"block {name}: non-finite coefficient")
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (m.shape[0],))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (m.shape[0],))
        if np.any(lo > hi):
            raise ValidationError(f"block {name}: empty row range")
        self._flush()
        self._blocks.append(m)
        self.row_lo.extend(lo.tolist())
        self.row_hi.extend(hi.tolist())
        self.row_names.extend(f"{name}[{i}]" for i in range(m.shape[0]))
        return np.arange(self.n_rows - m.shape[0], self.n_rows)

    def add_rows(self, matrix, relation, rhs, name=""):
        """Append every row of a matrix with a common relation."""
        rhs = np.asarray(rhs, dtype=float)
        inf = np.full_like(rhs, np.inf)
        if relation == LE:
            return self.add_block(matrix, -inf, rhs, name)
        if relation == GE:
            return self.add_block(matrix, rhs, inf, name)
        if relation == EQ:
            return self.add_block(matrix, rhs, rhs, name)
        raise ValidationError(f"block {name}: unknown relation {relation!r}")

    def _flush(self):
        if not self._rows:
            return
        indptr = np.zeros(len(self._rows) + 1, dtype=int)
        indptr[1:] = np.cumsum([len(c) for c, _ in self._rows])
        idx = np.concatenate([c for c, _ in self._rows])
        val = np.concatenate([v for _, v in self._rows])
        width = int(idx.max()) + 1 if idx.size else 0
        self._blocks.append(sp.csr_matrix((val, idx, indptr), shape=(len(self._rows), width)))
        self._rows = []

    def set_cost(self, var, cost):
        self.c[var] = float(cost)

    # views -----------------------------------------------------------------
    def matrix(self):
        """CSR constraint matrix (n_rows x n_vars)."""
        self._flush()
        if not self._blocks:
            return sp.csr_matrix((0, self.n_vars))
        blocks = []
        for b in self._blocks:
            if b.shape[1] > self.n_vars:
                raise ValidationError("row references an undefined variable")
            b = b.tocoo()
            blocks.append(sp.coo_matrix((b.data, (b.row, b.col)), shape=(b.shape[0], self.n_vars)))
        a = sp.vstack(blocks, format="csr")
        a.sum_duplicates()
        return a

    def arrays(self):
        return (np.array(self.c), self.matrix(), np.array(self.row_lo), np.array(self.row_hi),
                np.array(self.lo), np.array(self.hi))

    def copy(self):
        out = LinearProgram()
        out.c, out.lo, out.hi, out.names = list(self.c), list(self.lo), list(self.hi), list(self.names)
        self._flush()
        out._blocks = list(self._blocks)
        out.row_lo, out.row_hi, out.row_names = list(self.row_lo), list(self.row_hi), list(self.row_names)
        out.offset = self.offset
        return out

    def residual(self, x):
        """Largest bound or row violation of ``x``."""
        x = np.asarray(x, dtype=float)
        c, a, rlo, rhi, lo, hi = self.arrays()
        ax = a @ x
        viol = [np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0),
                np.max(rlo - ax, initial=0.0), np.max(ax - rhi, initial=0.0)]
        return float(max(viol))


@dataclass
class IntegerSpec:
    """Integer-constrained variables; ranges come from the LP variable bounds."""

    variables: list = field(default_factory=list)
    cap: int = 64

    def __post_init__(self):
        self.variables = [int(v) for v in self.variables]

    def validate(self, lp: LinearProgram):
        if len(self.variables) > self.cap:
            raise ValidationError(
                f"{len(self.variables)} integer variables exceed the cap of {self.cap}")
        for v in self.variables:
            if not 0 <= v < lp.n_vars:
                raise ValidationError(f"integer variable index {v} out of range")


@dataclass
class Solution:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray | None = None
    iterations: int = 0
    gap: float = 0.0
    message: str = ""

    @property
    def ok(self):
        return self.status == "optimal"
