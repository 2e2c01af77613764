"""Plain-text problem dump.

Format (one item per line, ``#`` starts a comment)::

    MINIMIZE <offset>
    VAR <name> <lo> <hi> <cost>
    ROW <name> <lo> <hi> <col>:<val> <col>:<val> ...
    INT <col> <col> ...
    END

Names must not contain whitespace; infinite bounds are written ``inf``/``-inf``.
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .lp import IntegerSpec, LinearProgram


def _fmt(v):
    return repr(float(v))


def write_lp_text(path, lp: LinearProgram, ints: IntegerSpec | None = None):
    c, a, rlo, rhi, lo, hi = lp.arrays()
    with open(path, "w") as fh:
        fh.write(f"MINIMIZE {_fmt(lp.offset)}\n")
        for j in range(lp.n_vars):
            name = lp.names[j].replace(" ", "_") or f"x{j}"
            fh.write(f"VAR {name} {_fmt(lo[j])} {_fmt(hi[j])} {_fmt(c[j])}\n")
        for i in range(a.shape[0]):
            s, e = a.indptr[i], a.indptr[i + 1]
            terms = " ".join(f"{k}:{_fmt(v)}" for k, v in zip(a.indices[s:e], a.data[s:e]))
            name = lp.row_names[i].replace(" ", "_") or f"r{i}"
            fh.write(f"ROW {name} {_fmt(rlo[i])} {_fmt(rhi[i])} {terms}\n")
        if ints is not None and ints.variables:
            fh.write("INT " + " ".join(str(v) for v in ints.variables) + "\n")
        fh.write("END\n")


def read_lp_text(path):
    """Inverse of :func:`write_lp_text`; returns ``(lp, ints)``."""
    lp = LinearProgram()
    ints = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "MINIMIZE":
                    lp.offset = float(tok[1])
                elif tok[0] == "VAR":
                    lp.add_var(tok[1], float(tok[2]), float(tok[3]), float(tok[4]))
                elif tok[0] == "ROW":
                    pairs = [t.split(":") for t in tok[4:]]
                    cols = [int(k) for k, _ in pairs]
                    vals = [float(v) for _, v in pairs]
                    lp.add_range_row(cols, vals, float(tok[2]), float(tok[3]), tok[1])
                elif tok[0] == "INT":
                    ints.extend(int(t) for t in tok[1:])
                elif tok[0] == "END":
                    break
                else:
                    raise ValueError(f"unknown keyword {tok[0]!r}")
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return lp, IntegerSpec(ints, cap=max(64, len(ints)))
