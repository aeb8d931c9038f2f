"""Jobs, servers, queues and the per-slot bookkeeping shared by all policies.

Server capacity is normalized to one.  Packing feasibility is decided on an
integer grid of ``GRID`` units per server so that the capacity constraint can
never be broken by floating-point drift: a job of size ``s`` occupies
``round(s * GRID)`` units and a server holds at most ``GRID`` units.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Sequence

import numpy as np

GRID = 10**12


class CapacityViolation(RuntimeError):
    """A placement would push a server over capacity (a scheduler bug)."""


class InfeasibleJob(ValueError):
    """A job is larger than the server capacity."""

    def __init__(self, indices: Sequence[int], sizes: Sequence[float], capacity: float):
        self.indices = list(indices)
        super().__init__(
            f"{len(self.indices)} job(s) exceed capacity {capacity}: "
            + ", ".join(f"#{i} (size {sizes[i]})" for i in self.indices[:10])
        )


def to_units(size) -> int:
    """Exact grid units for one size (float, int or Fraction)."""
    if isinstance(size, Rational):
        return round(Fraction(size) * GRID)
    return round(Fraction(float(size)) * GRID)


def units_array(sizes) -> np.ndarray:
    return np.rint(np.asarray(sizes, dtype=np.float64) * GRID).astype(np.int64)


def as_fraction(x) -> Fraction:
    """Fraction from an int, Fraction, decimal string or float (via its repr)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x.strip())
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class GeometricService:
    mu: float

    def __post_init__(self):
        if not 0 < self.mu <= 1:
            raise ValueError(f"geometric service needs mu in (0, 1], got {self.mu}")

    @property
    def mean(self) -> float:
        return 1.0 / self.mu


@dataclass(frozen=True)
class DeterministicService:
    slots: int

    def __post_init__(self):
        if int(self.slots) != self.slots or self.slots < 1:
            raise ValueError(f"deterministic service needs an integer >= 1 slots, got {self.slots}")

    @property
    def mean(self) -> float:
        return float(self.slots)


@dataclass(frozen=True)
class Job:
    id: int
    size: float
    arrival_slot: int = 0
    service: GeometricService | DeterministicService | None = None
    rounded_size: float | None = None

    def __post_init__(self):
        if not 0 < self.size <= 1:
            raise ValueError(f"job {self.id}: size {self.size} outside (0, 1]")
        if self.rounded_size is None:
            object.__setattr__(self, "rounded_size", self.size)
        elif self.rounded_size < self.size or self.rounded_size > 1:
            raise ValueError(f"job {self.id}: rounded size {self.rounded_size} < size {self.size}")
        if self.arrival_slot < 0:
            raise ValueError(f"job {self.id}: negative arrival slot")

    @property
    def units(self) -> int:
        """Grid units used for packing (the rounded size)."""
        return to_units(self.rounded_size)


@dataclass
class ServerState:
    index: int
    resident: list[Job] = field(default_factory=list)
    departed_last_slot: bool = False
    capacity: float = 1.0

    @property
    def load_units(self) -> int:
        # recomputed from the resident set every time; never decremented
        return sum(j.units for j in self.resident)

    @property
    def residual_units(self) -> int:
        return GRID - self.load_units

    @property
    def residual(self) -> float:
        return self.residual_units / GRID

    def fits(self, job: Job) -> bool:
        return job.units <= self.residual_units

    def copy(self) -> "ServerState":
        return replace(self, resident=list(self.resident))


def servers_from_residuals(residuals: Sequence[float]) -> list[ServerState]:
    """Servers whose residual capacities are given, each backed by one filler job."""
    servers = []
    for i, r in enumerate(residuals):
        used = 1 - as_fraction(r)
        resident = [] if used == 0 else [Job(id=-1 - i, size=float(used))]
        s = ServerState(index=i, resident=resident)
        if s.residual_units != to_units(r):  # filler rounding must be exact on the grid
            raise ValueError(f"residual {r} not representable")
        servers.append(s)
    return servers


class QueueState:
    """Waiting jobs in arrival order, optionally split into virtual queues."""

    def __init__(self, jobs: Iterable[Job] = (), types: dict[int, int] | None = None):
        self.jobs: list[Job] = []
        self.type_of: dict[int, int] = {}
        self.virtual: dict[int, list[Job]] = {}
        for job in jobs:
            self.push(job, None if types is None else types[job.id])

    def __len__(self) -> int:
        return len(self.jobs)

    def __contains__(self, job: Job) -> bool:
        return any(j.id == job.id for j in self.jobs)

    def push(self, job: Job, vq: int | None = None) -> None:
        self.jobs.append(job)
        if vq is not None:
            self.type_of[job.id] = vq
            self.virtual.setdefault(vq, []).append(job)

    def remove(self, job: Job) -> None:
        for i, j in enumerate(self.jobs):
            if j.id == job.id:
                del self.jobs[i]
                break
        else:
            raise KeyError(f"job {job.id} not queued")
        vq = self.type_of.pop(job.id, None)
        if vq is not None:
            self.virtual[vq] = [j for j in self.virtual[vq] if j.id != job.id]

    def vq_sizes(self, n_types: int) -> list[int]:
        return [len(self.virtual.get(j, ())) for j in range(n_types)]

    def copy(self) -> "QueueState":
        q = QueueState()
        q.jobs = list(self.jobs)
        q.type_of = dict(self.type_of)
        q.virtual = {k: list(v) for k, v in self.virtual.items()}
        return q


def apply_slot_accounting(
    queue: QueueState,
    servers: Sequence[ServerState],
    arrivals: Sequence[Job] = (),
    scheduled: Sequence[tuple[Job, int]] = (),
    departures: Sequence[tuple[Job, int]] = (),
    arrival_types: dict[int, int] | None = None,
) -> tuple[QueueState, list[ServerState]]:
    """Advance queue and servers across one slot.

    Arrivals join the queue, scheduled jobs move from the queue to their
    servers (checked against capacity in order), then departures leave.
    Inputs are not mutated.
    """
    q = queue.copy()
    srv = [s.copy() for s in servers]
    for job in arrivals:
        q.push(job, None if arrival_types is None else arrival_types.get(job.id))
    for job, idx in scheduled:
        if job not in q:
            raise ValueError(f"scheduled job {job.id} is neither queued nor arriving")
        if not srv[idx].fits(job):
            raise CapacityViolation(
                f"job {job.id} ({job.rounded_size}) exceeds residual {srv[idx].residual} of server {idx}"
            )
        q.remove(job)
        srv[idx].resident.append(job)
    for s in srv:
        s.departed_last_slot = False
    for job, idx in departures:
        before = len(srv[idx].resident)
        srv[idx].resident = [j for j in srv[idx].resident if j.id != job.id]
        if len(srv[idx].resident) == before:
            raise ValueError(f"job {job.id} is not resident on server {idx}")
        srv[idx].departed_last_slot = True
    return q, srv


def normalize_workload(capacity, sizes: Sequence) -> list:
    """Divide sizes by the server capacity; reject jobs that cannot fit."""
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    bad = [i for i, s in enumerate(sizes) if s <= 0 or s > capacity]
    if bad:
        raise InfeasibleJob(bad, sizes, capacity)
    exact = isinstance(capacity, Rational) and all(isinstance(s, Rational) for s in sizes)
    if exact and not (isinstance(capacity, int) and all(isinstance(s, int) for s in sizes)):
        return [Fraction(s) / Fraction(capacity) for s in sizes]
    return [s / capacity for s in sizes]
