"""Server configurations: enumeration, the reduced set K_RED, and weights."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Sequence

from .model import as_fraction
from .partition import MIN_J

DEFAULT_BUDGET = 10**6


class EnumerationBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class Configuration:
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts):
            raise ValueError("configuration counts must be non-negative")

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, j: int) -> int:
        return self.counts[j]

    def __add__(self, other: "Configuration") -> "Configuration":
        return Configuration(tuple(a + b for a, b in zip(self.counts, other.counts)))

    def load(self, sizes: Sequence) -> Fraction:
        return sum((c * as_fraction(r) for c, r in zip(self.counts, sizes)), Fraction(0))

    def is_feasible(self, sizes: Sequence) -> bool:
        return self.load(sizes) <= 1

    def __repr__(self) -> str:
        return f"Configuration{self.counts}"


def unit(n: int, j: int, count: int = 1) -> Configuration:
    c = [0] * n
    c[j] = count
    return Configuration(tuple(c))


@dataclass(frozen=True)
class TypedSystem:
    """Per-type sizes and (optionally) arrival probabilities."""

    sizes: tuple
    probs: tuple | None = None

    def __post_init__(self):
        sizes = tuple(as_fraction(r) for r in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not sizes:
            raise ValueError("a typed system needs at least one type")
        if self.probs is not None:
            probs = tuple(as_fraction(p) for p in self.probs)
            if len(probs) != len(sizes):
                raise ValueError("sizes and probs differ in length")
            if any(p < 0 for p in probs) or sum(probs) != 1:
                raise ValueError(f"probabilities must be non-negative and sum to 1, got {sum(probs)}")
            object.__setattr__(self, "probs", probs)

    @property
    def n_types(self) -> int:
        return len(self.sizes)

    @property
    def mean_size(self) -> Fraction:
        if self.probs is None:
            raise ValueError("mean size needs probabilities")
        return sum((p * r for p, r in zip(self.probs, self.sizes)), Fraction(0))


def _integer_sizes(sizes: Sequence) -> tuple[list[int], int]:
    r = [as_fraction(x) for x in sizes]
    den = 1
    for x in r:
        den = den * x.denominator // gcd(den, x.denominator)
    return [int(x * den) for x in r], den


def enumerate_maximal(sizes: Sequence, budget: int = DEFAULT_BUDGET) -> list[Configuration]:
    """All maximal feasible configurations, lexicographically sorted.

    A feasible configuration is maximal when no single extra job of any type
    fits, i.e. its leftover capacity is below the smallest size.  Sizes are
    scaled to integers over their common denominator, so the search is exact.
    """
    if not sizes:
        return []
    if any(as_fraction(x) <= 0 for x in sizes):
        raise ValueError("sizes must be positive")
    r, cap = _integer_sizes(sizes)
    if any(x > cap for x in r):
        return []
    n = len(r)
    smallest = min(r)
    out: list[tuple[int, ...]] = []
    visited = 0
    counts = [0] * n

    def dfs(i: int, left: int) -> None:
        nonlocal visited
        visited += 1
        if visited > budget:
            raise EnumerationBudgetExceeded(f"more than {budget} nodes visited for {n} types")
        if i == n:
            if left < smallest:
                out.append(tuple(counts))
            return
        for c in range(left // r[i], -1, -1):
            counts[i] = c
            dfs(i + 1, left - c * r[i])
        counts[i] = 0

    dfs(0, cap)
    return [Configuration(c) for c in sorted(out)]


def enumerate_feasible(sizes: Sequence, budget: int = DEFAULT_BUDGET) -> list[Configuration]:
    """Every feasible configuration (dominated ones included)."""
    r = [as_fraction(x) for x in sizes]
    bounds = [int(1 // x) if x <= 1 else 0 for x in r]
    out = []
    counts = [0] * len(r)

    def dfs(i: int, left: Fraction) -> None:
        if len(out) > budget:
            raise EnumerationBudgetExceeded(f"more than {budget} feasible configurations")
        if i == len(r):
            out.append(Configuration(tuple(counts)))
            return
        for c in range(min(bounds[i], int(left // r[i])) + 1):
            counts[i] = c
            dfs(i + 1, left - c * r[i])
        counts[i] = 0

    dfs(0, Fraction(1))
    return sorted(out)


def k_red(J: int) -> list[Configuration]:
    """The 4J-4 reduced configurations over the 2J universal types, canonical order."""
    if int(J) != J or J < MIN_J:
        raise ValueError(f"J must be an integer >= {MIN_J}, got {J}")
    n = 2 * J
    out = [unit(n, 2 * m, 2**m) for m in range(J)]
    out += [unit(n, 2 * m + 1, 3 * 2 ** (m - 1)) for m in range(1, J)]
    out += [unit(n, 1) + unit(n, 2 * m, 2**m // 3) for m in range(2, J)]
    out += [unit(n, 1) + unit(n, 2 * m + 1, 2 ** (m - 1)) for m in range(1, J)]
    return out


def weight(k: Configuration | Sequence[int], Q: Sequence[int]) -> int:
    counts = k.counts if isinstance(k, Configuration) else tuple(k)
    if len(counts) != len(Q):
        raise ValueError(f"dimension mismatch: {len(counts)} vs {len(Q)}")
    return sum(a * b for a, b in zip(counts, Q))


def max_weight(K: Sequence[Configuration], Q: Sequence[int]) -> tuple[Configuration, int]:
    """Maximum-weight configuration; the earliest one in K wins ties."""
    if not K:
        raise ValueError("empty configuration set")
    best, best_w = K[0], weight(K[0], Q)
    for k in K[1:]:
        w = weight(k, Q)
        if w > best_w:
            best, best_w = k, w
    return best, best_w
