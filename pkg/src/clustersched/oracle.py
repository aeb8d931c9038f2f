"""Maximum supportable workload for finite-type systems and related checks.

For identical servers the supportable region is ``rho * P <= L * x`` with
``x`` in the convex hull of feasible configurations.  The supremum over the
open region equals the optimum of the closed LP

    maximize rho  s.t.  rho * P_j <= L * sum_k p_k * k_j,  sum_k p_k <= 1,  p >= 0

which is solved exactly over the maximal configurations.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .configs import Configuration, TypedSystem, enumerate_maximal, k_red, max_weight
from .lp import maximize
from .model import as_fraction
from .partition import PartitionSpec, parent_map, refine, type_of, universal_partition


@dataclass(frozen=True)
class WorkloadProblem:
    system: TypedSystem
    L: int = 1
    restriction: tuple[Configuration, ...] | None = None

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("L must be a positive integer")
        if self.system.probs is None:
            raise ValueError("workload problems need type probabilities")
        if self.restriction is not None:
            object.__setattr__(self, "restriction", tuple(self.restriction))


@dataclass(frozen=True)
class RoundedBounds:
    upper_rounded: Fraction
    lower_rounded: Fraction | None  # None: unbounded (every type rounds down to 0)

    @property
    def lower_unbounded(self) -> bool:
        return self.lower_rounded is None

    @property
    def gap(self) -> Fraction | None:
        return None if self.lower_rounded is None else self.lower_rounded - self.upper_rounded

    def ordered(self) -> bool:
        return self.lower_rounded is None or self.upper_rounded <= self.lower_rounded


def max_workload(sizes: Sequence, weights: Sequence, L: int, configs: Sequence[Configuration]) -> Fraction | None:
    """LP optimum for arbitrary non-negative per-type weights (sum need not be 1).

    Types with zero weight impose no constraint.  Returns None when no type
    carries weight, i.e. the workload is unbounded.
    """
    w = [as_fraction(p) for p in weights]
    rows = [j for j, p in enumerate(w) if p > 0]
    if not rows:
        return None
    if not configs:
        raise ValueError("no feasible configuration")
    K = len(configs)
    A = []
    for j in rows:
        A.append([w[j]] + [-L * k[j] for k in configs])
    A.append([Fraction(0)] + [Fraction(1)] * K)
    b = [0] * len(rows) + [1]
    c = [1] + [0] * K
    return maximize(c, A, b).value


def _check_restriction(problem: WorkloadProblem) -> list[Configuration]:
    sys = problem.system
    for k in problem.restriction:
        if len(k) != sys.n_types:
            raise ValueError(f"restricted configuration {k} has wrong dimension")
        if not k.is_feasible(sys.sizes):
            raise ValueError(f"restricted configuration {k} is infeasible")
    return list(problem.restriction)


def rho_star(problem: WorkloadProblem) -> Fraction:
    """Exact maximum supportable workload (uses the restriction when present)."""
    sys = problem.system
    if any(r > 1 for r in sys.sizes):
        raise ValueError("a job type is larger than the server capacity")
    if problem.restriction is not None:
        configs = _check_restriction(problem)
        if not configs:
            raise ValueError("empty restriction")
    else:
        configs = enumerate_maximal(sys.sizes)
    return max_workload(sys.sizes, sys.probs, problem.L, configs)


def rho_star_restricted(problem: WorkloadProblem) -> Fraction:
    if not problem.restriction:
        raise ValueError("rho_star_restricted needs a non-empty restriction")
    return rho_star(problem)


def kred_problem(sizes: Sequence, probs: Sequence, J: int, L: int = 1) -> WorkloadProblem:
    """Jobs typed by the universal partition, each type at its sup, restricted to K_RED(J)."""
    part = universal_partition(J)
    mass = [Fraction(0)] * part.n_types
    for r, p in zip(sizes, probs):
        mass[type_of(as_fraction(r), part)[0]] += as_fraction(p)
    system = TypedSystem(tuple(part.sup(i) for i in range(part.n_types)), tuple(mass))
    return WorkloadProblem(system, L, tuple(k_red(J)))


def type_masses(partition: PartitionSpec, cdf) -> list[Fraction]:
    F = cdf.cdf if hasattr(cdf, "cdf") else cdf
    return [as_fraction(F(partition.sup(i))) - as_fraction(F(partition.inf(i))) for i in range(partition.n_types)]


def rounded_bounds(partition: PartitionSpec, cdf, L: int = 1) -> RoundedBounds:
    """Workload limits of the upper- and lower-rounded virtual-queue systems."""
    P = type_masses(partition, cdf)
    sups = [partition.sup(i) for i in range(partition.n_types)]
    infs = [partition.inf(i) for i in range(partition.n_types)]
    if any(s > 1 for s in sups):
        raise ValueError("partition subset extends beyond capacity")

    up = [i for i in range(partition.n_types) if P[i] > 0]
    upper = max_workload([sups[i] for i in up], [P[i] for i in up], L,
                         enumerate_maximal([sups[i] for i in up]))
    low = [i for i in up if infs[i] > 0]
    if low:
        low_sizes = [infs[i] for i in low]
        lower = max_workload(low_sizes, [P[i] for i in low], L, enumerate_maximal(low_sizes))
    else:
        lower = None
    return RoundedBounds(upper, lower)


def lr_bar_bound(L, mean_size) -> Fraction:
    m = as_fraction(mean_size)
    if m <= 0:
        raise ValueError("mean size must be positive")
    return Fraction(L) / m


@dataclass(frozen=True)
class Prop1Result:
    holds: bool
    witness: Configuration | None
    witness_weight: int
    best_weight: int  # max over all upper-rounded configurations of the refinement
    ratio: Fraction | None


def prop1_check(J: int, jobs: Sequence, refinement: PartitionSpec | None = None) -> Prop1Result:
    """Check that some reduced configuration reaches 2/3 of the best refined weight."""
    base = universal_partition(J)
    refinement = base if refinement is None else refinement
    parent_map(refinement, base)  # raises if not a refinement
    sizes = [as_fraction(s) for s in jobs]
    if any(s <= base.residual_hi or s > 1 for s in sizes):
        raise ValueError(f"job sizes must lie in (2**-{J}, 1]")

    Q = [0] * base.n_types
    for s in sizes:
        Q[type_of(s, base)[0]] += 1
    QX = [0] * refinement.n_types
    for s in sizes:
        QX[type_of(s, refinement)[0]] += 1

    active = [i for i in range(refinement.n_types) if QX[i] > 0]
    best = 0
    if active:
        for k in enumerate_maximal([refinement.sup(i) for i in active]):
            best = max(best, sum(c * QX[i] for c, i in zip(k.counts, active)))
    witness, w = max_weight(k_red(J), Q)
    holds = 3 * w >= 2 * best
    ratio = Fraction(w, best) if best else None
    return Prop1Result(holds, witness, w, best, ratio)


@dataclass
class Prop1Report:
    J: int
    trials: int
    seed: int
    violations: list = field(default_factory=list)
    min_ratio: Fraction | None = None

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "trials": self.trials,
            "seed": self.seed,
            "passed": self.passed,
            "violations": self.violations,
            "min_ratio": None if self.min_ratio is None else str(self.min_ratio),
            "min_ratio_decimal": None if self.min_ratio is None else float(self.min_ratio),
        }


def random_prop1_instance(J: int, rng: random.Random, max_jobs: int = 40, max_breaks: int = 4, grid: int = 1000):
    """Random (jobs, refinement) pair with sizes in (2**-J, 1], drawn from a random mixture of the base types."""
    base = universal_partition(J)
    lo = int(base.residual_hi * grid) + 1
    special = [b for b in base.breakpoints() if base.residual_hi < b <= 1]
    cells = [(max(lo, int(s.lo * grid) + 1), int(s.hi * grid)) for s in base.subsets if s.hi > base.residual_hi]
    cells = [c for c in cells if c[0] <= c[1]]
    breaks = set()
    for _ in range(rng.randint(0, max_breaks)):
        if rng.random() < 0.5:
            b = rng.randint(lo, grid - 1)
        else:
            # just above a base lower edge, where refined sups undercut the base sups most
            a, c = rng.choice(cells)
            b = rng.randint(a, a + max(0, (c - a) // 5))
        if b < grid:
            breaks.add(Fraction(b, grid))
    breaks = sorted(breaks)
    fine = refine(base, breaks) if breaks else base
    mix = [rng.random() ** 2 for _ in cells]  # per-instance type mixture; skewed queues stress K_RED
    jobs = []
    for _ in range(rng.randint(1, max_jobs)):
        if rng.random() < 0.2:
            jobs.append(rng.choice(special + breaks) if breaks else rng.choice(special))
        else:
            a, b = rng.choices(cells, weights=mix)[0]
            if rng.random() < 0.4:
                b = a + (b - a) // 10  # near the lower edge: small jobs rounded up the most
            jobs.append(Fraction(rng.randint(a, b), grid))
    return jobs, fine


def prop1_campaign(J: int, trials: int = 200, seed: int = 0, max_jobs: int = 40) -> Prop1Report:
    rng = random.Random(f"prop1:{J}:{seed}")
    report = Prop1Report(J, trials, seed)
    for t in range(trials):
        jobs, fine = random_prop1_instance(J, rng, max_jobs=max_jobs)
        res = prop1_check(J, jobs, fine)
        if res.ratio is not None and (report.min_ratio is None or res.ratio < report.min_ratio):
            report.min_ratio = res.ratio
        if not res.holds:
            report.violations.append({"trial": t, "jobs": [str(j) for j in jobs],
                                      "breakpoints": [str(b) for b in fine.breakpoints()],
                                      "ratio": str(res.ratio)})
    return report


def prop2_instance(epsilon) -> tuple[WorkloadProblem, WorkloadProblem]:
    """Two-size instance where partition-oblivious packing loses a third of the throughput."""
    eps = as_fraction(epsilon)
    if not 0 < eps < Fraction(1, 3):
        raise ValueError("epsilon must lie in (0, 1/3)")
    half = Fraction(1, 2)
    system = TypedSystem((half - eps, half + eps), (half, half))
    restricted = (Configuration((2, 0)), Configuration((0, 1)))
    return WorkloadProblem(system, 1), WorkloadProblem(system, 1, restricted)
