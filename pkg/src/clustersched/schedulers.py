"""Per-slot scheduling policies over explicit queue and server objects.

These wrappers load a snapshot into the kernel state layout, run exactly the
code the simulator runs, and translate the placement log back into
``(Job, server index)`` pairs.  Inputs are never mutated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels as K
from .configs import Configuration, k_red
from .model import GRID, Job, QueueState, ServerState, to_units
from .partition import PartitionSpec, choose_J, universal_partition

POLICIES = ("fifo-ff", "bf-js", "vqs", "vqs-bf")
PARTITION_POLICIES = ("vqs", "vqs-bf")

Placement = tuple[Job, int]


@dataclass
class SchedulerState:
    policy: str
    J: int | None = None
    configs: dict[int, Configuration] = field(default_factory=dict)  # server index -> active K_RED member
    departed: set[int] = field(default_factory=set)  # BF-J/S: servers with departures last slot

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {', '.join(POLICIES)}")
        if self.policy in PARTITION_POLICIES:
            if self.J is None:
                raise ValueError(f"{self.policy} needs J")
            self.partition  # validates J

    @property
    def partition(self) -> PartitionSpec | None:
        return universal_partition(self.J) if self.policy in PARTITION_POLICIES else None

    @property
    def kred(self) -> list[Configuration]:
        return k_red(self.J)

    def reserved(self, server: int) -> bool:
        """True while the server's configuration holds the two-thirds VQ1 slice."""
        k = self.configs.get(server)
        return k is not None and k[1] == 1


def resolve_J(J, law=None, epsilon=None) -> int:
    """An explicit J, or the smallest J whose residual mass is <= epsilon."""
    if J == "auto":
        if law is None or epsilon is None:
            raise ValueError('J="auto" needs a size law and epsilon')
        return choose_J(law, epsilon)
    if isinstance(J, bool) or int(J) != J:
        raise ValueError(f"J must be an integer or 'auto', got {J!r}")
    return int(J)


def kred_matrix(J: int) -> np.ndarray:
    return np.array([k.counts for k in k_red(J)], dtype=np.int64)


class _Snapshot:
    """Kernel state for one scheduling call."""

    def __init__(self, waiting: Sequence[Job], servers: Sequence[ServerState], partition: PartitionSpec | None,
                 J: int | None = None):
        self.waiting = list(waiting)
        self.servers = list(servers)
        ids = [j.id for j in self.waiting]
        if len(set(ids)) != len(ids):
            raise ValueError("a job appears twice in the queue")
        n = len(self.waiting)
        true = np.array([to_units(j.size) for j in self.waiting], dtype=np.int64)
        if partition is not None:
            vq, pack = partition.classify_units(true) if n else (np.zeros(0, np.int64), true)
            n_types, kred = partition.n_types, kred_matrix(J)
        else:
            vq, pack = np.full(n, -1, dtype=np.int64), true
            n_types, kred = 0, []
        self.S = K.build_state(pack, true, vq, np.zeros(n, np.int64), np.full(n, -1, np.int64),
                               len(self.servers), n_types, kred, horizon=1)
        for i in range(n):
            K.wait_push(self.S, i)
        srv = self.S.srv
        for row, s in enumerate(self.servers):
            for job in s.resident:
                u = to_units(job.size)
                if partition is not None and job.id >= 0:
                    t, r = partition.classify_units(np.array([u]))
                    t, u = int(t[0]), int(r[0])
                    self.S.rtype[row, t] += 1
                    if t == 1:
                        srv[row, K.VQ1LOAD] += u
                srv[row, K.LOAD] += u
                srv[row, K.TRUELOAD] += to_units(job.size)
                srv[row, K.NRES] += 1
            if srv[row, K.LOAD] > GRID:
                raise ValueError(f"server {s.index} is already over capacity")
        self.S.misc[K.M_NPLACED] = 0

    def set_configs(self, state: SchedulerState) -> None:
        index = {k: i for i, k in enumerate(state.kred)}
        for row, s in enumerate(self.servers):
            k = state.configs.get(s.index)
            if k is None:
                if s.resident:
                    raise ValueError(f"busy server {s.index} has no active configuration")
                continue
            if k not in index:
                raise ValueError(f"configuration {k} is not in K_RED({state.J})")
            self.S.srv[row, K.CFG] = index[k]

    def placements(self) -> list[Placement]:
        if self.S.misc[K.M_FAULT] != 0:
            from .model import CapacityViolation

            raise CapacityViolation("scheduler attempted an infeasible placement")
        n = int(self.S.misc[K.M_NPLACED])
        return [(self.waiting[int(j)], self.servers[int(s)].index) for j, s in self.S.plog[:n]]


def _waiting(queue) -> list[Job]:
    return list(queue.jobs) if isinstance(queue, QueueState) else list(queue)


def fifo_ff_step(queue, servers: Sequence[ServerState]) -> list[Placement]:
    """Place head-of-line jobs first-fit until the head fits nowhere."""
    snap = _Snapshot(_waiting(queue), servers, None)
    K.fifo_ff_pass(snap.S, 0)
    return snap.placements()


def bf_j_step(jobs: Iterable[Job], servers: Sequence[ServerState]) -> list[Placement]:
    """Each job in turn goes to the fitting server with the least residual."""
    snap = _Snapshot(list(jobs), servers, None)
    for i in range(len(snap.waiting)):
        K.bf_j_job(snap.S, i, 0)
    return snap.placements()


def bf_s_step(servers: Sequence[ServerState], queue) -> list[Placement]:
    """Each server in turn takes the largest fitting queued job until none fits."""
    snap = _Snapshot(_waiting(queue), servers, None)
    for row in range(len(snap.servers)):
        K.bf_s_server(snap.S, row, 0)
    return snap.placements()


def bf_js_step(state: SchedulerState, queue, new_arrivals: Iterable[Job], servers: Sequence[ServerState]) -> list[Placement]:
    """BF-S on last slot's departure servers, then BF-J for the still-waiting arrivals."""
    arrivals = list(new_arrivals)
    arrival_ids = {j.id for j in arrivals}
    waiting = [j for j in _waiting(queue) if j.id not in arrival_ids] + arrivals
    snap = _Snapshot(waiting, servers, None)
    departed = set(state.departed) | {s.index for s in servers if s.departed_last_slot}
    for row, s in enumerate(snap.servers):
        if s.index in departed:
            K.bf_s_server(snap.S, row, 0)
    first = len(waiting) - len(arrivals)
    for i in range(first, len(waiting)):
        if snap.S.jobs[i, K.STATUS] == K.WAITING:
            K.bf_j_job(snap.S, i, 0)
    return snap.placements()


def _partition_step(state: SchedulerState, queue, servers, per_server) -> tuple[list[Placement], SchedulerState]:
    if state.policy not in PARTITION_POLICIES:
        raise ValueError(f"{state.policy} is not a virtual-queue policy")
    snap = _Snapshot(_waiting(queue), servers, state.partition, state.J)
    snap.set_configs(state)
    for row in range(len(snap.servers)):
        per_server(snap.S, row, 0)
        if snap.S.misc[K.M_FAULT] != 0:
            break
    placements = snap.placements()
    kred = state.kred
    configs = dict(state.configs)
    for row, s in enumerate(snap.servers):
        if s.index in configs or not s.resident:  # empty servers were renewed
            configs[s.index] = kred[int(snap.S.srv[row, K.CFG])]
    new_state = SchedulerState(state.policy, state.J, configs, set())
    return placements, new_state


def vqs_step(state: SchedulerState, queue, servers: Sequence[ServerState]) -> tuple[list[Placement], SchedulerState]:
    """Renew empty servers to the max-weight K_RED member, then fill head-of-line."""
    return _partition_step(state, queue, servers, K.vqs_server)


def vqs_bf_step(state: SchedulerState, queue, servers: Sequence[ServerState]) -> tuple[list[Placement], SchedulerState]:
    """VQS renewal, largest-fit filling of the configuration, then a BF-S pass."""
    return _partition_step(state, queue, servers, K.vqs_bf_server)
