"""Small dense exact-rational simplex (Bland's rule).

Solves ``max c.x  s.t.  A x <= b, x >= 0`` with ``b >= 0``, so the slack
basis is feasible from the start and no phase one is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence


class LPUnbounded(ArithmeticError):
    pass


@dataclass(frozen=True)
class LPResult:
    value: Fraction
    x: tuple[Fraction, ...]
    pivots: int


def maximize(c: Sequence, A: Sequence[Sequence], b: Sequence, max_pivots: int = 100_000) -> LPResult:
    m, n = len(A), len(c)
    if len(b) != m or any(len(row) != n for row in A):
        raise ValueError("inconsistent LP dimensions")
    if any(Fraction(v) < 0 for v in b):
        raise ValueError("right-hand side must be non-negative")
    width = n + m
    rows = []
    for i in range(m):
        row = [Fraction(v) for v in A[i]] + [Fraction(0)] * m
        row[n + i] = Fraction(1)
        rows.append(row)
    rhs = [Fraction(v) for v in b]
    # objective row holds -reduced costs; optimal when all entries >= 0
    z = [-Fraction(v) for v in c] + [Fraction(0)] * m
    zval = Fraction(0)
    basis = [n + i for i in range(m)]

    pivots = 0
    while True:
        enter = next((j for j in range(width) if z[j] < 0), None)
        if enter is None:
            break
        leave, best = None, None
        for i in range(m):
            a = rows[i][enter]
            if a > 0:
                ratio = rhs[i] / a
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    leave, best = i, ratio
        if leave is None:
            raise LPUnbounded("objective is unbounded")
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("simplex pivot limit reached")

        prow = rows[leave]
        inv = 1 / prow[enter]
        if inv != 1:
            prow = [v * inv for v in prow]
            rows[leave] = prow
            rhs[leave] *= inv
        nz = [j for j in range(width) if prow[j] != 0]
        for i in range(m):
            if i == leave:
                continue
            f = rows[i][enter]
            if f != 0:
                r = rows[i]
                for j in nz:
                    r[j] -= f * prow[j]
                rhs[i] -= f * rhs[leave]
        f = z[enter]
        for j in nz:
            z[j] -= f * prow[j]
        zval -= f * rhs[leave]
        basis[leave] = enter

    x = [Fraction(0)] * n
    for i, var in enumerate(basis):
        if var < n:
            x[var] = rhs[i]
    return LPResult(zval, tuple(x), pivots)
