"""Job-size laws and cluster-trace preprocessing."""
from __future__ import annotations

import csv
import io
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import as_fraction

TRACE_COLUMNS = ("arrival_time_us", "duration_us", "cpu", "mem")
PREPARED_COLUMNS = ("slot", "size", "duration_slots")


@dataclass(frozen=True)
class Discrete:
    values: tuple
    probs: tuple

    def __post_init__(self):
        values = tuple(as_fraction(v) for v in self.values)
        probs = tuple(as_fraction(p) for p in self.probs)
        if len(values) != len(probs) or not values:
            raise ValueError("discrete law needs matching, non-empty values and probs")
        if any(not 0 < v <= 1 for v in values):
            raise ValueError("discrete sizes must lie in (0, 1]")
        if any(p < 0 for p in probs) or sum(probs) != 1:
            raise ValueError("discrete probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    def cdf(self, x) -> Fraction:
        x = as_fraction(x)
        return sum((p for v, p in zip(self.values, self.probs) if v <= x), Fraction(0))

    def mean(self) -> Fraction:
        return sum((v * p for v, p in zip(self.values, self.probs)), Fraction(0))

    @property
    def min_size(self) -> Fraction:
        return min(v for v, p in zip(self.values, self.probs) if p > 0)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Sizes and the index of the value each sample took."""
        p = np.array([float(q) for q in self.probs])
        cls = rng.choice(len(self.values), size=n, p=p / p.sum())
        vals = np.array([float(v) for v in self.values])
        return vals[cls], cls.astype(np.int64)


@dataclass(frozen=True)
class Uniform:
    a: Fraction
    b: Fraction

    def __post_init__(self):
        a, b = as_fraction(self.a), as_fraction(self.b)
        if not 0 < a <= b <= 1:
            raise ValueError("uniform law needs 0 < a <= b <= 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def cdf(self, x) -> Fraction:
        x = as_fraction(x)
        if x < self.a:
            return Fraction(0)
        if x >= self.b:
            return Fraction(1)
        return (x - self.a) / (self.b - self.a)

    def quantile(self, p) -> Fraction:
        return self.a + as_fraction(p) * (self.b - self.a)

    def mean(self) -> Fraction:
        return (self.a + self.b) / 2

    @property
    def min_size(self) -> Fraction:
        return self.a

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        x = rng.uniform(float(self.a), float(self.b), size=n)
        return x, np.full(n, -1, dtype=np.int64)


class UnitUniform:
    """Continuous uniform law on (0, 1]; the quantile partitions have exact breakpoints."""

    min_size = Fraction(0)

    def cdf(self, x) -> Fraction:
        x = as_fraction(x)
        return min(max(x, Fraction(0)), Fraction(1))

    def quantile(self, p) -> Fraction:
        return as_fraction(p)

    def mean(self) -> Fraction:
        return Fraction(1, 2)


@dataclass(frozen=True)
class Empirical:
    sample_sizes: tuple

    def __post_init__(self):
        xs = tuple(sorted(float(s) for s in self.sample_sizes))
        if not xs:
            raise ValueError("empirical law needs a non-empty sample")
        if xs[0] <= 0 or xs[-1] > 1:
            raise ValueError("empirical sizes must lie in (0, 1]")
        object.__setattr__(self, "sample_sizes", xs)

    def cdf(self, x) -> float:
        return bisect_right(self.sample_sizes, float(x)) / len(self.sample_sizes)

    def mean(self) -> float:
        return math.fsum(self.sample_sizes) / len(self.sample_sizes)

    @property
    def min_size(self) -> float:
        return self.sample_sizes[0]

    @property
    def distinct(self) -> int:
        return len(set(self.sample_sizes))

    def steps(self) -> list[tuple[float, float]]:
        """(size, cdf value) at every jump."""
        n = len(self.sample_sizes)
        out = []
        for i, x in enumerate(self.sample_sizes):
            if i + 1 == n or self.sample_sizes[i + 1] != x:
                out.append((x, (i + 1) / n))
        return out

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(self.sample_sizes)
        return xs[rng.integers(0, len(xs), size=n)], np.full(n, -1, dtype=np.int64)


def mean_size(law):
    return law.mean()


def empirical_cdf(sizes: Iterable[float]) -> Empirical:
    return Empirical(tuple(sizes))


def law_from_dict(d: dict, capacity=1):
    """Size law from a scenario block; sizes are divided by ``capacity``."""
    kind = d.get("kind")
    cap = as_fraction(capacity)
    if kind == "discrete":
        values = [as_fraction(v) / cap for v in d["values"]]
        probs = d.get("probs") or [Fraction(1, len(values))] * len(values)
        return Discrete(tuple(values), tuple(as_fraction(p) for p in probs))
    if kind == "uniform":
        return Uniform(as_fraction(d["a"]) / cap, as_fraction(d["b"]) / cap)
    if kind == "unit-uniform":
        return UnitUniform()
    raise ValueError(f"unknown size law kind {kind!r}")


# ---------------------------------------------------------------- traces


@dataclass(frozen=True)
class TraceJob:
    arrival_time: int  # microseconds
    duration: int  # microseconds
    cpu: float
    mem: float

    @property
    def size(self) -> float:
        return max(self.cpu, self.mem)


@dataclass
class PreparedTrace:
    slots: np.ndarray
    sizes: np.ndarray
    durations: np.ndarray
    report: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.slots)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(PREPARED_COLUMNS) + "\n")
        for t, s, d in zip(self.slots.tolist(), self.sizes.tolist(), self.durations.tolist()):
            buf.write(f"{t},{s!r},{d}\n")
        return buf.getvalue()

    def write(self, path: Path, report_path: Path | None = None) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="")
        if report_path is not None:
            Path(report_path).write_text(json.dumps(self.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class TraceError(ValueError):
    pass


def _parse_int(s: str) -> int:
    s = s.strip()
    try:
        return int(s)
    except ValueError:
        v = float(s)
        if not math.isfinite(v) or v != int(v):
            raise
        return int(v)


def trace_prepare(source, slot_ms=100, scaling=1, capacity=1.0) -> PreparedTrace:
    """Turn a raw task CSV into a slotted job stream.

    ``source`` is a path, file object or CSV text.  Sizes are ``max(cpu, mem)``
    divided by ``capacity``; rows outside (0, 1] are dropped and counted.
    Arrival times are divided by ``scaling`` (the traffic scaling 1/beta)
    before slotting; durations become whole slots, rounded up, at least one.
    Input already in the prepared ``slot,size,duration_slots`` format is
    accepted too, with slots divided by ``scaling``.
    """
    text = _read_text(source)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise TraceError("empty trace")
    header = tuple(h.strip() for h in rows[0])
    prepared = header == PREPARED_COLUMNS
    if not prepared and tuple(h for h in header if h in TRACE_COLUMNS) != TRACE_COLUMNS:
        raise TraceError(f"header must contain {', '.join(TRACE_COLUMNS)} (or {', '.join(PREPARED_COLUMNS)})")
    col = {name: header.index(name) for name in (PREPARED_COLUMNS if prepared else TRACE_COLUMNS)}

    scale = as_fraction(scaling)
    if scale <= 0:
        raise TraceError("traffic scaling must be positive")
    slot_us = as_fraction(slot_ms) * 1000
    cap = float(capacity)
    slots, sizes, durs = [], [], []
    malformed, dropped = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if prepared:
                slot = math.floor(_parse_int(row[col["slot"]]) / scale)
                size = float(row[col["size"]])
                dur = _parse_int(row[col["duration_slots"]])
                if dur < 1:
                    raise ValueError("duration_slots < 1")
            else:
                arrival = _parse_int(row[col["arrival_time_us"]])
                duration = _parse_int(row[col["duration_us"]])
                cpu, mem = float(row[col["cpu"]]), float(row[col["mem"]])
                if arrival < 0 or duration <= 0 or not (math.isfinite(cpu) and math.isfinite(mem)):
                    raise ValueError("negative arrival, non-positive duration or non-finite resource")
                slot = math.floor(Fraction(arrival) / scale / slot_us)
                size = max(cpu, mem) / cap
                dur = max(1, math.ceil(Fraction(duration) / slot_us))
        except (ValueError, IndexError) as exc:
            malformed.append({"row": lineno, "reason": str(exc) or type(exc).__name__})
            continue
        if not 0 < size <= 1:
            dropped.append(lineno)
            continue
        slots.append(slot)
        sizes.append(size)
        durs.append(dur)

    if not slots:
        raise TraceError(f"no usable rows ({len(malformed)} malformed, {len(dropped)} out of range)")
    order = np.argsort(np.asarray(slots, dtype=np.int64), kind="stable")
    report = {
        "rows": len(rows) - 1,
        "kept": len(slots),
        "dropped_size": dropped,
        "malformed": malformed,
        "slot_ms": str(as_fraction(slot_ms)),
        "traffic_scaling": str(scale),
    }
    return PreparedTrace(
        np.asarray(slots, dtype=np.int64)[order],
        np.asarray(sizes, dtype=np.float64)[order],
        np.asarray(durs, dtype=np.int64)[order],
        report,
    )


def load_prepared(path) -> PreparedTrace:
    return trace_prepare(Path(path), scaling=1)


def _read_text(source) -> str:
    if isinstance(source, Path):
        return source.read_text(encoding="utf-8")
    if hasattr(source, "read"):
        return source.read()
    if isinstance(source, str) and "\n" not in source and Path(source).exists():
        return Path(source).read_text(encoding="utf-8")
    return str(source)


def read_trace_jobs(source) -> list[TraceJob]:
    rows = csv.DictReader(io.StringIO(_read_text(source)))
    return [TraceJob(int(r["arrival_time_us"]), int(r["duration_us"]), float(r["cpu"]), float(r["mem"])) for r in rows]
