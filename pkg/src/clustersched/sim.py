"""Seeded slot simulation, metrics and an empirical stability verdict."""
from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels as K
from .model import GRID, CapacityViolation, units_array
from .partition import universal_partition
from .schedulers import PARTITION_POLICIES, POLICIES, kred_matrix, resolve_J
from .workload import PreparedTrace, law_from_dict, trace_prepare

MASK64 = (1 << 64) - 1
MAX_EXPECTED_JOBS = 2 * 10**8  # each job costs about 120 bytes of kernel state


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replicate_seed(seed: int, i: int) -> int:
    """Seed of replication i; replication 0 keeps the base seed."""
    return seed & MASK64 if i == 0 else splitmix64((seed & MASK64) ^ splitmix64(i))


class ScenarioError(ValueError):
    def __init__(self, msg: str, key: str | None = None):
        super().__init__(msg)
        self.key = key  # offending scenario field, when known


_NUM = (int, float)
_FIELD_TYPES = (
    ("policy", str, "a string"), ("servers", int, "an integer"), ("capacity", _NUM, "a number"),
    ("rate", _NUM, "a number"), ("alpha", _NUM, "a number"), ("sizes", dict, "an object"),
    ("service", str, "a string"), ("mu", _NUM, "a number"), ("slots", int, "an integer"),
    ("horizon", int, "an integer"), ("seed", int, "an integer"), ("sample_every", int, "an integer"),
    ("epsilon", _NUM, "a number"), ("burn_in", _NUM, "a number"), ("window", _NUM, "a number"),
    ("theta", _NUM, "a number"), ("tail", _NUM, "a number"), ("name", str, "a string"),
)


@dataclass(frozen=True)
class Scenario:
    policy: str
    servers: int = 1
    capacity: float = 1.0
    rate: float | None = None  # Poisson arrivals per slot
    alpha: float | None = None  # alternative: rate = alpha * mu * L / mean size
    sizes: dict | None = None  # size-law block (kind discrete | uniform | unit-uniform)
    service: str = "geometric"
    mu: float | None = None
    slots: int | None = None  # deterministic service duration
    trace: PreparedTrace | None = field(default=None, repr=False, compare=False)
    horizon: int = 1000
    seed: int = 0
    sample_every: int = 100
    J: int | str = "auto"
    epsilon: float = 0.01
    burn_in: float = 0.2
    window: float = 0.1
    theta: float = 0.05
    tail: float = 0.5
    lock_config: tuple | None = None  # per-class counts for the lock-in statistic
    debug: bool = False
    record_servers: bool = False
    name: str = "run"

    def __post_init__(self):
        def bad(msg, key=None):
            raise ScenarioError(msg, key)

        for key, kinds, what in _FIELD_TYPES:
            v = getattr(self, key)
            if v is not None and (isinstance(v, bool) or not isinstance(v, kinds)):
                bad(f"{key} must be {what}, got {v!r}", key)
        if not (self.J == "auto" or (isinstance(self.J, int) and not isinstance(self.J, bool))):
            bad(f"J must be an integer or \"auto\", got {self.J!r}", "J")

        if self.policy not in POLICIES:
            bad(f"policy must be one of {', '.join(POLICIES)}, got {self.policy!r}", "policy")
        if int(self.servers) != self.servers or self.servers < 1:
            bad("servers must be a positive integer", "servers")
        if not self.capacity > 0:
            bad("capacity must be positive", "capacity")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            bad("horizon must be >= 1", "horizon")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            bad("sample_every must be >= 1", "sample_every")
        if self.trace is None:
            if self.sizes is None:
                bad("a size law (sizes) is required without a trace", "sizes")
            if self.service == "geometric":
                if self.mu is None or not 0 < self.mu <= 1:
                    bad("mu must lie in (0, 1]", "mu")
            elif self.service == "deterministic":
                if self.slots is None or int(self.slots) != self.slots or self.slots < 1:
                    bad("deterministic service needs slots >= 1", "slots")
            else:
                bad(f"service must be geometric or deterministic, got {self.service!r}", "service")
            if (self.rate is None) == (self.alpha is None):
                bad("give exactly one of rate and alpha", "rate")
            if self.rate is not None and not self.rate >= 0:
                bad("rate must be >= 0", "rate")
            if self.alpha is not None and not self.alpha >= 0:
                bad("alpha must be >= 0", "alpha")
            try:
                self.law
            except (ValueError, KeyError, TypeError) as exc:
                bad(f"invalid size law: {exc}", "sizes")
        for key in ("burn_in", "window", "tail"):
            v = getattr(self, key)
            if not 0 <= v < 1 or (key != "burn_in" and v == 0):
                bad(f"{key} must lie in {'[0, 1)' if key == 'burn_in' else '(0, 1)'}", key)
        if not self.theta > 0:
            bad("theta must be positive", "theta")
        if self.policy in PARTITION_POLICIES:
            try:
                resolve_J(self.J, self.law if self.trace is None else self._trace_law(), self.epsilon)
                universal_partition(self.J_value)
            except ValueError as exc:
                bad(str(exc), "J")

    @property
    def law(self):
        return law_from_dict(self.sizes, self.capacity)

    def _trace_law(self):
        from .workload import empirical_cdf

        return empirical_cdf(self.trace.sizes)

    @property
    def mean_service(self) -> float:
        return 1 / self.mu if self.service == "geometric" else float(self.slots)

    @property
    def arrival_rate(self) -> float:
        if self.trace is not None:
            return int((self.trace.slots < self.horizon).sum()) / self.horizon
        if self.rate is not None:
            return float(self.rate)
        return float(self.alpha * self.servers / self.mean_service / float(self.law.mean()))

    @property
    def J_value(self) -> int | None:
        if self.policy not in PARTITION_POLICIES:
            return None
        law = self._trace_law() if self.trace is not None else self.law
        return resolve_J(self.J, law, self.epsilon)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Workload:
    arr_ptr: np.ndarray  # jobs arriving in slot t are ids arr_ptr[t]..arr_ptr[t+1]-1
    sizes: np.ndarray  # grid units
    classes: np.ndarray
    durations: np.ndarray
    n_classes: int

    @property
    def n_jobs(self) -> int:
        return int(self.sizes.shape[0])


def _stream(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seq))


def generate_workload(scn: Scenario) -> Workload:
    """Pre-draw the whole job stream.

    Arrival counts, sizes and service durations come from three independent
    Philox substreams of the scenario seed, so every policy sees the same jobs.
    A geometric duration is the number of per-slot Bernoulli(mu) coins up to
    and including the first success.
    """
    T = int(scn.horizon)
    if scn.trace is not None:
        tr = scn.trace
        keep = tr.slots < T
        counts = np.bincount(tr.slots[keep], minlength=T)[:T]
        sizes = units_array(tr.sizes[keep])
        durations = tr.durations[keep].astype(np.int64)
        classes = np.full(sizes.shape[0], -1, dtype=np.int64)
        n_classes = 0
    else:
        if scn.arrival_rate * T > MAX_EXPECTED_JOBS:
            raise ValueError(f"expected {scn.arrival_rate * T:.3g} jobs exceeds the limit of {MAX_EXPECTED_JOBS:.0e}")
        arr_ss, size_ss, srv_ss = np.random.SeedSequence(scn.seed & MASK64).spawn(3)
        counts = _stream(arr_ss).poisson(scn.arrival_rate, size=T)
        n = int(counts.sum())
        law = scn.law
        x, classes = law.sample(_stream(size_ss), n)
        sizes = units_array(x)
        if scn.service == "geometric":
            durations = _stream(srv_ss).geometric(scn.mu, size=n).astype(np.int64)
        else:
            durations = np.full(n, int(scn.slots), dtype=np.int64)
        n_classes = len(law.values) if hasattr(law, "values") else 0
    arr_ptr = np.zeros(T + 1, dtype=np.int64)
    np.cumsum(counts, out=arr_ptr[1:])
    return Workload(arr_ptr, sizes, classes.astype(np.int64), durations, n_classes)


@dataclass(frozen=True)
class Verdict:
    verdict: str  # Stable | Unstable | Inconclusive
    slope: float
    first_mean: float
    last_mean: float
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)


def stability_verdict(series: Sequence[float], lam: float, burn_in: float = 0.2, window: float = 0.1,
                      theta: float = 0.05, slots: Sequence[float] | None = None) -> Verdict:
    """Empirical stability call on a queue-size series.

    The slope is a least-squares fit over the post-burn-in samples (per slot
    when ``slots`` is given, else per sample).  Unstable: slope > theta*lam
    and the last window mean exceeds three times the first.  Stable: |slope|
    <= theta*lam and the last window mean stays within three times
    max(first window mean, 1).  Anything else is Inconclusive.
    """
    q = np.asarray(series, dtype=np.float64)
    t = np.arange(q.shape[0], dtype=np.float64) if slots is None else np.asarray(slots, dtype=np.float64)
    start = int(math.floor(burn_in * q.shape[0]))
    q, t = q[start:], t[start:]
    if q.shape[0] < 10:
        raise ValueError(f"need at least 10 samples after burn-in, got {q.shape[0]}")
    tc = t - t.mean()
    denom = float(np.dot(tc, tc))
    slope = float(np.dot(tc, q - q.mean()) / denom) if denom > 0 else 0.0
    w = max(1, int(math.floor(window * q.shape[0])))
    first, last = float(q[:w].mean()), float(q[-w:].mean())
    thr = theta * lam
    if slope > thr and last > 3 * first:
        v = "Unstable"
    elif abs(slope) <= thr and last <= 3 * max(first, 1.0):
        v = "Stable"
    else:
        v = "Inconclusive"
    return Verdict(v, slope, first, last, thr)


@dataclass
class RunMetrics:
    name: str
    policy: str
    seed: int
    J: int | None
    slots: np.ndarray
    queue: np.ndarray
    arrivals: np.ndarray  # cumulative
    departures: np.ndarray  # cumulative
    in_service: np.ndarray
    busy_units: np.ndarray  # total true size in service, grid units
    vq: np.ndarray  # samples x virtual queues (zero columns without a partition)
    servers: np.ndarray | None  # samples x L x (config, residents, packed load, true load)
    tail_mean: float
    verdict: Verdict
    lock_in: float | None
    lock_slots: int
    both_nonempty_slots: int
    processed_slots: int
    arrival_rate: float

    @property
    def busy_capacity(self) -> np.ndarray:
        return self.busy_units / GRID

    def conservation_holds(self) -> bool:
        return bool(np.all(self.arrivals == self.queue + self.in_service + self.departures))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["slot", "Q_total"] + [f"VQ{i}" for i in range(self.vq.shape[1])]
        cols += ["busy_capacity", "arrivals_cum", "departures_cum", "in_service"]
        buf.write(",".join(cols) + "\n")
        busy = self.busy_capacity
        for r in range(self.slots.shape[0]):
            row = [str(int(self.slots[r])), str(int(self.queue[r]))]
            row += [str(int(v)) for v in self.vq[r]]
            row += [repr(float(busy[r])), str(int(self.arrivals[r])), str(int(self.departures[r])),
                    str(int(self.in_service[r]))]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def servers_csv(self) -> str:
        if self.servers is None:
            raise ValueError("run was not recorded with record_servers")
        buf = io.StringIO()
        buf.write("slot,server,config,residents,packed_load,true_load\n")
        for r in range(self.slots.shape[0]):
            for s in range(self.servers.shape[1]):
                c, n, p, tl = (int(v) for v in self.servers[r, s])
                buf.write(f"{int(self.slots[r])},{s},{c},{n},{p / GRID!r},{tl / GRID!r}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "name": self.name,
            "policy": self.policy,
            "seed": self.seed,
            "J": self.J,
            "arrival_rate": self.arrival_rate,
            "samples": int(self.slots.shape[0]),
            "tail_mean_queue": self.tail_mean,
            "final_queue": int(self.queue[-1]) if self.queue.shape[0] else 0,
            "verdict": self.verdict.to_dict(),
            "lock_in_fraction": self.lock_in,
            "both_nonempty_slots": self.both_nonempty_slots,
            "processed_slots": self.processed_slots,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def run(scn: Scenario, workload: Workload | None = None) -> RunMetrics:
    """Simulate one scenario; identical scenario and seed give identical metrics."""
    wl = generate_workload(scn) if workload is None else workload
    T = int(scn.horizon)
    L = int(scn.servers)
    J = scn.J_value
    if J is not None:
        part = universal_partition(J)
        vq, pack = part.classify_units(wl.sizes) if wl.n_jobs else (np.zeros(0, np.int64), wl.sizes)
        n_types, kred = part.n_types, kred_matrix(J)
    else:
        vq, pack = np.full(wl.n_jobs, -1, dtype=np.int64), wl.sizes
        n_types, kred = 0, []
    S = K.build_state(pack, wl.sizes, vq, wl.durations, wl.classes, L, n_types, kred, T, wl.n_classes)

    n_samples = (T - 1) // scn.sample_every + 1
    samp = np.zeros((n_samples, 6), dtype=np.int64)
    samp_q = np.zeros((n_samples, n_types), dtype=np.int64)
    samp_srv = np.zeros((n_samples, L, 4) if scn.record_servers else (1, 1, 4), dtype=np.int64)
    acc = np.zeros(K.NACC, dtype=np.int64)
    check_lock = scn.lock_config is not None and wl.n_classes > 0
    lock = np.zeros(max(wl.n_classes, 1), dtype=np.int64)
    if check_lock:
        if len(scn.lock_config) != wl.n_classes:
            raise ScenarioError("lock_config needs one count per size class", "lock_config")
        lock[:] = scn.lock_config
    tail_start = int(math.floor(T * (1 - scn.tail)))
    processed, fault = K.run_slots(
        S, K.POLICY_CODES[scn.policy], T, wl.arr_ptr, int(scn.sample_every), samp, samp_q, samp_srv,
        bool(scn.record_servers), acc, tail_start, lock, check_lock, 1 if scn.debug else 10_000,
    )
    if fault > 0:
        raise CapacityViolation(f"{scn.policy}: infeasible placement of job {fault - 1}")
    if fault < 0:
        raise CapacityViolation(f"{scn.policy}: server {-1 - fault} exceeds capacity")
    if scn.debug:
        _audit_loads(S)

    lam = scn.arrival_rate
    verdict = stability_verdict(samp[:, 1], lam, scn.burn_in, scn.window, scn.theta, slots=samp[:, 0]) \
        if n_samples >= 10 else Verdict("Inconclusive", 0.0, 0.0, 0.0, scn.theta * lam)
    both = int(acc[K.A_BOTH])
    return RunMetrics(
        name=scn.name, policy=scn.policy, seed=int(scn.seed), J=J,
        slots=samp[:, 0].copy(), queue=samp[:, 1].copy(), arrivals=samp[:, 2].copy(),
        departures=samp[:, 3].copy(), in_service=samp[:, 4].copy(), busy_units=samp[:, 5].copy(),
        vq=samp_q, servers=samp_srv if scn.record_servers else None,
        tail_mean=float(acc[K.A_QTAIL]) / max(int(acc[K.A_TAILSLOTS]), 1),
        verdict=verdict,
        lock_in=(int(acc[K.A_LOCK]) / both) if check_lock and both else None,
        lock_slots=int(acc[K.A_LOCK]), both_nonempty_slots=both,
        processed_slots=int(processed), arrival_rate=lam,
    )


def _audit_loads(S) -> None:
    """Recompute every server load from the resident jobs and compare."""
    jobs = S.jobs
    serving = jobs[:, K.STATUS] == K.SERVING
    L = S.srv.shape[0]
    load = np.zeros(L, dtype=np.int64)
    np.add.at(load, jobs[serving, K.SERVER], jobs[serving, K.PACK])
    if not np.array_equal(load, S.srv[:, K.LOAD]) or np.any(load > S.misc[K.M_CAP]):
        raise CapacityViolation("tracked server loads disagree with resident jobs")


def _run_rep(args) -> RunMetrics:
    scn, seed = args
    return run(scn.with_seed(seed))


def replicate(scn: Scenario, n_reps: int, workers: int = 1) -> list[RunMetrics]:
    """Runs with seeds replicate_seed(seed, i), returned in order of i."""
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    jobs = [(scn, replicate_seed(scn.seed, i)) for i in range(n_reps)]
    if workers <= 1 or n_reps == 1:
        return [_run_rep(a) for a in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_rep, jobs))


def scenario_from_dict(d: dict, base_dir: Path | None = None) -> Scenario:
    """Build a Scenario from a flat scenario mapping (one policy)."""
    d = dict(d)
    trace = None
    if "trace" in d:
        path = Path(d.pop("trace"))
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        trace = trace_prepare(path, slot_ms=d.pop("slot_ms", 100), scaling=d.pop("trace_scaling", 1),
                              capacity=d.get("capacity", 1.0))
    if "lock_config" in d and d["lock_config"] is not None:
        d["lock_config"] = tuple(int(c) for c in d["lock_config"])
    known = {f for f in Scenario.__dataclass_fields__} - {"trace"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ScenarioError(f"unknown scenario key(s): {', '.join(unknown)}", unknown[0])
    if trace is not None:
        d.setdefault("service", "deterministic")
    return Scenario(trace=trace, **d)


def lam_for_alpha(alpha, mu, L: int, mean_size) -> Fraction:
    """Arrival rate alpha * mu * L / mean size."""
    from .model import as_fraction

    return as_fraction(alpha) * as_fraction(mu) * L / as_fraction(mean_size)
