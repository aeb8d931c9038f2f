"""Partitions of (0, 1] into job types.

Two kinds exist.  ``universal_partition(J)`` builds the 2J geometrically
shrinking intervals used by the virtual-queue schedulers; type 0 holds the
largest jobs and sizes in ``(0, 2**-J]`` fall into the last type with their
size rounded up to ``2**-J``.  ``quantile_partition`` and ``refine`` build
plain interval partitions whose types are numbered from the smallest sizes
upward.  All endpoints are exact fractions and membership is half-open
``(lo, hi]`` evaluated on the packing grid.
"""
from __future__ import annotations

import enum
import logging
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import GRID, as_fraction, to_units

log = logging.getLogger(__name__)

MIN_J = 2
MAX_J = 20


class RoundingMode(enum.Enum):
    UPPER = "upper"
    LOWER = "lower"


@dataclass(frozen=True)
class Subset:
    lo: Fraction
    hi: Fraction
    index: int

    def contains(self, other: "Subset") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi


@dataclass(frozen=True)
class PartitionSpec:
    kind: str
    subsets: tuple[Subset, ...]
    J: int | None = None
    residual_hi: Fraction | None = None
    collapsed: int = field(default=0, compare=False)

    @property
    def n_types(self) -> int:
        return len(self.subsets)

    def by_index(self, i: int) -> Subset:
        return self.subsets[i]

    def sup(self, i: int) -> Fraction:
        return self.subsets[i].hi

    def inf(self, i: int) -> Fraction:
        """Infimum of everything mapped to type ``i`` (residual included)."""
        if self.residual_hi is not None and i == self.n_types - 1:
            return Fraction(0)
        return self.subsets[i].lo

    def cover(self) -> list[Subset]:
        """Subsets plus the residual interval, ascending in size."""
        parts = sorted(self.subsets, key=lambda s: s.lo)
        if self.residual_hi is not None:
            parts.insert(0, Subset(Fraction(0), self.residual_hi, self.n_types - 1))
        return parts

    def breakpoints(self) -> list[Fraction]:
        pts = {Fraction(0), Fraction(1)}
        for s in self.cover():
            pts.add(s.lo)
            pts.add(s.hi)
        return sorted(pts)

    def thresholds(self) -> tuple[np.ndarray, np.ndarray]:
        """(ascending floor(hi * GRID), type index) pairs for grid classification."""
        parts = self.cover()
        thr = np.array([math.floor(p.hi * GRID) for p in parts], dtype=np.int64)
        idx = np.array([p.index for p in parts], dtype=np.int64)
        return thr, idx

    def classify_units(self, units: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized type and rounded grid size for an array of grid sizes."""
        units = np.asarray(units, dtype=np.int64)
        if np.any(units <= 0) or np.any(units > GRID):
            raise ValueError("sizes must lie in (0, 1]")
        thr, idx = self.thresholds()
        pos = np.searchsorted(thr, units, side="left")
        types = idx[pos]
        rounded = units.copy()
        if self.residual_hi is not None:
            res = pos == 0
            rounded[res] = math.floor(self.residual_hi * GRID)
        return types, rounded

    def to_dict(self) -> dict:
        def frac(x: Fraction) -> dict:
            return {"exact": str(x), "decimal": f"{float(x):.12f}"}

        out = {
            "kind": self.kind,
            "n_types": self.n_types,
            "subsets": [{"type": s.index, "lo": frac(s.lo), "hi": frac(s.hi)} for s in self.subsets],
        }
        if self.J is not None:
            out["J"] = self.J
        if self.residual_hi is not None:
            out["residual"] = {"lo": frac(Fraction(0)), "hi": frac(self.residual_hi),
                               "maps_to": self.n_types - 1, "rounded_to": frac(self.residual_hi)}
        if self.collapsed:
            out["collapsed"] = self.collapsed
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionSpec":
        subsets = tuple(
            Subset(Fraction(s["lo"]["exact"]), Fraction(s["hi"]["exact"]), int(s["type"])) for s in d["subsets"]
        )
        res = d.get("residual")
        return cls(
            kind=d["kind"],
            subsets=subsets,
            J=d.get("J"),
            residual_hi=None if res is None else Fraction(res["hi"]["exact"]),
            collapsed=d.get("collapsed", 0),
        )


def universal_partition(J: int) -> PartitionSpec:
    if int(J) != J or J < MIN_J:
        raise ValueError(f"J must be an integer >= {MIN_J}, got {J}")
    if J > MAX_J:
        raise ValueError(f"J must be <= {MAX_J}")
    subsets = []
    for m in range(J):
        top = Fraction(1, 2**m)
        subsets.append(Subset(Fraction(2, 3) * top, top, 2 * m))
        subsets.append(Subset(top / 2, Fraction(2, 3) * top, 2 * m + 1))
    subsets.sort(key=lambda s: s.index)
    return PartitionSpec("universal", tuple(subsets), J=J, residual_hi=Fraction(1, 2**J))


def intervals(breakpoints: Iterable) -> PartitionSpec:
    """Interval partition from breakpoints; 0 and 1 are added if missing."""
    pts = sorted({as_fraction(b) for b in breakpoints} | {Fraction(0), Fraction(1)})
    if pts[0] < 0 or pts[-1] > 1:
        raise ValueError("breakpoints must lie in [0, 1]")
    subsets = tuple(Subset(lo, hi, i) for i, (lo, hi) in enumerate(zip(pts, pts[1:])))
    return PartitionSpec("intervals", subsets)


def type_of(size, spec: PartitionSpec):
    """Type index and rounded size of one job size.

    Exact rationals are compared with the exact endpoints; floats go through
    the packing grid, like every size in the simulator.
    """
    exact = isinstance(size, Rational) and not isinstance(size, bool)
    if exact:
        x = Fraction(size)
        if not 0 < x <= 1:
            raise ValueError(f"size {size} outside (0, 1]")
        hit = lambda part: x <= part.hi
    else:
        u = to_units(size)
        if not 0 < u <= GRID:
            raise ValueError(f"size {size} outside (0, 1]")
        hit = lambda part: u <= math.floor(part.hi * GRID)
    for part in spec.cover():
        if hit(part):
            if spec.residual_hi is not None and part.lo == 0:
                r = spec.residual_hi
                return part.index, (r if exact else float(r))
            return part.index, size
    raise AssertionError("partition does not cover (0, 1]")


def _cdf_fn(cdf) -> Callable:
    return cdf.cdf if hasattr(cdf, "cdf") else cdf


def choose_J(cdf, epsilon: float, J_max: int = MAX_J) -> int:
    """Smallest J >= 2 with cdf(2**-J) < epsilon."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    F = _cdf_fn(cdf)
    for J in range(MIN_J, J_max + 1):
        if F(Fraction(1, 2**J)) < epsilon:
            return J
    log.warning("cdf mass below 2**-%d is still >= %s; using J_max", J_max, epsilon)
    return J_max


def _bisect_quantile(F: Callable, p: float, tol: float) -> float:
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if F(mid) >= p:
            hi = mid
        else:
            lo = mid
    return hi


def quantile_partition(cdf, n: int, tol: float = 1e-12) -> PartitionSpec:
    """Partition into 2**(n+1) equal-probability intervals.

    Uses ``cdf.quantile`` when the law provides an exact inverse and falls back
    to bisection for the leftmost solution otherwise.  Coinciding breakpoints
    collapse their empty intervals; the count is kept on the result.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    m = 2 ** (n + 1)
    exact = getattr(cdf, "quantile", None)
    F = _cdf_fn(cdf)
    pts = [Fraction(0)]
    for i in range(1, m):
        p = Fraction(i, m)
        x = exact(p) if exact is not None else Fraction(_bisect_quantile(F, float(p), tol))
        pts.append(as_fraction(x))
    pts.append(Fraction(1))
    unique = sorted(set(pts))
    collapsed = len(pts) - len(unique)
    if collapsed:
        log.info("quantile partition n=%d: %d interval(s) collapsed", n, collapsed)
    subsets = tuple(Subset(lo, hi, i) for i, (lo, hi) in enumerate(zip(unique, unique[1:])))
    return PartitionSpec("intervals", subsets, collapsed=collapsed)


def refine(spec: PartitionSpec, extra: Sequence) -> PartitionSpec:
    extra = [as_fraction(b) for b in extra]
    if any(not 0 < b < 1 for b in extra):
        raise ValueError("refinement breakpoints must lie in (0, 1)")
    return intervals(spec.breakpoints() + extra)


def parent_map(fine: PartitionSpec, coarse: PartitionSpec) -> list[int]:
    """For each subset of ``fine``, the type of the ``coarse`` subset containing it.

    Raises ValueError when ``fine`` is not a refinement of ``coarse``.
    """
    cover = coarse.cover()
    los = [c.lo for c in cover]
    out = []
    for s in fine.subsets:
        k = bisect_left(los, s.lo)
        cands = [c for c in cover[max(k - 1, 0): k + 1] if c.contains(s)]
        if not cands:
            raise ValueError(f"subset ({s.lo}, {s.hi}] is not inside any coarse subset")
        out.append(cands[0].index)
    return out


def is_refinement(fine: PartitionSpec, coarse: PartitionSpec) -> bool:
    try:
        parent_map(fine, coarse)
    except ValueError:
        return False
    return True
