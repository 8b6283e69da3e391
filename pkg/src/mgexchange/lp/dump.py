"""Plain-text LP dump: one objective line, one line per row, one per bounded column."""

from __future__ import annotations

import numpy as np

from .model import LinearProgram


def _num(v):
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def dump_lp(lp: LinearProgram) -> str:
    names = lp.var_names
    lines = ["obj: " + " ".join(f"{_num(c)} {names[j]}" for j, c in enumerate(lp.c) if c != 0)]
    A = lp.A.tocsr()
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        terms = " ".join(f"{_num(v)} {names[j]}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
        lines.append(f"{lp.row_names[i]}: {terms} {lp.senses[i]} {_num(lp.rhs[i])}")
    for j in range(lp.c.size):
        lines.append(f"bound {names[j]}: {_num(lp.lb[j])} {_num(lp.ub[j])}")
    return "\n".join(lines) + "\n"
