"""Command-line entry point: simulations, sweeps and the exact oracles."""
from __future__ import annotations

import argparse
import csv
import io
import json
import re
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from . import __version__
from ._accel import backend
from .configs import Configuration, TypedSystem, k_red
from .model import as_fraction
from .oracle import WorkloadProblem, kred_problem, prop1_campaign, rounded_bounds, rho_star
from .partition import quantile_partition, universal_partition
from .sim import Scenario, ScenarioError, replicate_seed, run, scenario_from_dict
from .workload import TraceError, law_from_dict, trace_prepare

FILE_KEYS = ("policies", "replications", "sweep")
SWEEP_PARAMS = ("alpha", "rate", "trace_scaling")


class InputError(Exception):
    """Bad user input; reported as ``path:line: message``."""


# -------------------------------------------------------------- scenario files


def _line_of(text: str, key: str | None) -> int | None:
    if key is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def _where(path: Path, line: int | None) -> str:
    return f"{path}:{line}" if line else str(path)


def load_scenario_file(path) -> tuple[dict, list[Scenario], str]:
    """Parse and validate a scenario file; returns (file options, scenarios, raw text)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{_where(path, exc.lineno)}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}:1: scenario file must hold a JSON object")

    opts = {k: doc.pop(k) for k in FILE_KEYS if k in doc}
    policies = opts.get("policies")
    if policies is None:
        policies = [doc.pop("policy", None)]
    else:
        if "policy" in doc:
            raise InputError(f"{_where(path, _line_of(text, 'policy'))}: give either policy or policies")
        if not isinstance(policies, list) or not policies:
            raise InputError(f"{_where(path, _line_of(text, 'policies'))}: policies must be a non-empty list")
    reps = opts.get("replications", 1)
    if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        raise InputError(f"{_where(path, _line_of(text, 'replications'))}: replications must be a positive integer")
    doc.setdefault("name", path.stem)
    scenarios = []
    for pol in policies:
        try:
            scenarios.append(scenario_from_dict({**doc, "policy": pol}, base_dir=path.parent))
        except ScenarioError as exc:
            raise InputError(f"{_where(path, _line_of(text, exc.key))}: {exc}") from None
        except (TraceError, OSError) as exc:
            raise InputError(f"{_where(path, _line_of(text, 'trace'))}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: {exc}") from None
    if "sweep" in opts:
        _check_sweep(opts["sweep"], path, text)
    opts["replications"] = reps
    opts["doc"] = doc
    return opts, scenarios, text


def _check_sweep(sw, path: Path, text: str) -> None:
    where = _where(path, _line_of(text, "sweep"))
    if not isinstance(sw, dict) or sw.get("param") not in SWEEP_PARAMS:
        raise InputError(f"{where}: sweep needs param in {', '.join(SWEEP_PARAMS)}")
    vals = sw.get("values")
    if not isinstance(vals, list) or not vals:
        raise InputError(f"{where}: sweep grid is empty")
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
            raise InputError(f"{where}: sweep values must be positive numbers, got {v!r}")


def _write_all(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for rel, content in files.items():
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf-8", newline="")


def _emit(rows: list[dict], fmt: str, stream=None) -> None:
    stream = sys.stdout if stream is None else stream
    if fmt == "json":
        stream.write(json.dumps(rows, indent=2, sort_keys=False) + "\n")
        return
    if not rows:
        return
    w = csv.DictWriter(stream, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def _table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    _emit(rows, "csv", buf)
    return buf.getvalue()


# -------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    opts, scenarios, _ = load_scenario_file(args.file)
    if args.seed is not None:
        scenarios = [replace(s, seed=args.seed) for s in scenarios]
    reps = args.reps or opts["replications"]
    started = time.time()
    files, rows = {}, []
    for scn in scenarios:
        for i in range(reps):
            seed = replicate_seed(scn.seed, i)
            m = run(scn.with_seed(seed))
            stem = f"{scn.name}_{scn.policy}" + (f"_rep{i}" if reps > 1 else "")
            files[f"{stem}.csv"] = m.to_csv()
            files[f"{stem}.json"] = m.summary_json()
            if scn.record_servers:
                files[f"{stem}_servers.csv"] = m.servers_csv()
            rows.append({
                "policy": scn.policy, "rep": i, "seed": seed, "verdict": m.verdict.verdict,
                "slope": m.verdict.slope, "tail_mean_queue": m.tail_mean,
                "lock_in_fraction": "" if m.lock_in is None else m.lock_in,
            })
    name = scenarios[0].name
    files[f"{name}_summary.csv"] = _table_csv(rows)
    files[f"{name}_summary.json"] = json.dumps(rows, indent=2) + "\n"
    files[f"{name}_run.meta.json"] = json.dumps({
        "started_unix": started, "wall_seconds": time.time() - started, "backend": backend(),
        "version": __version__,
    }, indent=2) + "\n"
    _write_all(Path(args.out or "out"), files)
    _emit(rows, args.format)
    return 0


def _sweep_cell(task):
    scn, seed = task
    try:
        m = run(scn.with_seed(seed))
        return {"status": "ok", "tail_mean_queue": m.tail_mean, "verdict": m.verdict.verdict,
                "slope": m.verdict.slope, "arrival_rate": m.arrival_rate}
    except Exception as exc:  # a failed cell is reported, the sweep goes on
        return {"status": f"failed: {type(exc).__name__}: {exc}", "tail_mean_queue": "", "verdict": "",
                "slope": "", "arrival_rate": ""}


def _sweep_scenario(scn: Scenario, doc: dict, param: str, value, base_dir: Path) -> Scenario:
    if param == "alpha":
        return replace(scn, alpha=value, rate=None)
    if param == "rate":
        return replace(scn, rate=value, alpha=None)
    return scenario_from_dict({**doc, "policy": scn.policy, "trace_scaling": value, "seed": scn.seed},
                              base_dir=base_dir)


def cmd_sweep(args) -> int:
    path = Path(args.file)
    opts, scenarios, text = load_scenario_file(path)
    if "sweep" not in opts:
        raise InputError(f"{path}: no sweep block")
    sw = opts["sweep"]
    param, grid = sw["param"], sw["values"]
    reps = args.reps or opts["replications"]
    if args.seed is not None:
        scenarios = [replace(s, seed=args.seed) for s in scenarios]

    cells, tasks = [], []
    for value in grid:
        for base in scenarios:
            try:
                scn = _sweep_scenario(base, opts["doc"], param, value, path.parent)
            except (ScenarioError, TraceError, ValueError) as exc:
                scn, err = None, f"failed: {exc}"
            for i in range(reps):
                seed = replicate_seed(base.seed, i)
                cells.append((value, base.policy, i, seed))
                tasks.append((scn, seed) if scn is not None else err)

    started = time.time()
    todo = [(k, t) for k, t in enumerate(tasks) if not isinstance(t, str)]
    results: list = [None] * len(tasks)
    for k, t in enumerate(tasks):
        if isinstance(t, str):
            results[k] = {"status": t, "tail_mean_queue": "", "verdict": "", "slope": "", "arrival_rate": ""}
    if args.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for (k, _), res in zip(todo, pool.map(_sweep_cell, [t for _, t in todo])):
                results[k] = res
    else:
        for k, t in todo:
            results[k] = _sweep_cell(t)

    long_rows = [{"value": v, "policy": p, "rep": i, "seed": s, **r} for (v, p, i, s), r in zip(cells, results)]
    policies = [s.policy for s in scenarios]
    wide_rows = []
    for value in grid:
        row = {param: value}
        for pol in policies:
            vals = [r["tail_mean_queue"] for r in long_rows
                    if r["value"] == value and r["policy"] == pol and r["status"] == "ok"]
            row[pol] = statistics.median(vals) if vals else "failed"
        wide_rows.append(row)
    name = scenarios[0].name
    files = {
        f"{name}_sweep_long.csv": _table_csv(long_rows),
        f"{name}_sweep_wide.csv": _table_csv(wide_rows),
        f"{name}_sweep.json": json.dumps({"param": param, "values": grid, "policies": policies,
                                          "replications": reps, "cells": long_rows}, indent=2) + "\n",
        f"{name}_sweep.meta.json": json.dumps({"started_unix": started, "wall_seconds": time.time() - started,
                                               "backend": backend(), "workers": args.workers,
                                               "version": __version__}, indent=2) + "\n",
    }
    _write_all(Path(args.out or "out"), files)
    _emit(wide_rows, args.format)
    failed = sum(r["status"] != "ok" for r in long_rows)
    if failed:
        print(f"{failed} of {len(long_rows)} cells failed", file=sys.stderr)
    return 0


def _parse_config(s: str) -> Configuration:
    try:
        return Configuration(tuple(int(c) for c in s.split(",")))
    except ValueError:
        raise InputError(f"bad configuration {s!r}; expected comma-separated counts like 2,0") from None


def cmd_oracle(args) -> int:
    sizes = [as_fraction(s) / as_fraction(args.capacity) for s in args.sizes]
    probs = [as_fraction(p) for p in args.probs] if args.probs else [Fraction(1, len(sizes))] * len(sizes)
    if len(probs) != len(sizes):
        raise InputError("--sizes and --probs differ in length")
    system = TypedSystem(tuple(sizes), tuple(probs))
    out = {"sizes": [str(s) for s in sizes], "probs": [str(p) for p in probs], "L": args.L}
    rho = rho_star(WorkloadProblem(system, args.L))
    out["rho_star"] = str(rho)
    out["rho_star_decimal"] = float(rho)
    if args.restrict:
        rr = rho_star(WorkloadProblem(system, args.L, tuple(_parse_config(c) for c in args.restrict)))
        out["rho_restricted"] = str(rr)
        out["rho_restricted_decimal"] = float(rr)
    if args.kred:
        rk = rho_star(kred_problem(sizes, probs, args.kred, args.L))
        out["rho_kred"] = str(rk)
        out["rho_kred_decimal"] = float(rk)
    if args.mu is not None:
        out["lambda_star"] = float(rho * as_fraction(args.mu))
    _report(out, args, "oracle")
    return 0


def cmd_kred(args) -> int:
    rows = [{"index": i, "counts": ",".join(map(str, k.counts))} for i, k in enumerate(k_red(args.J))]
    _report(rows, args, f"kred_J{args.J}")
    return 0


def cmd_prop1(args) -> int:
    seed = 0 if args.seed is None else args.seed
    rep = prop1_campaign(args.J, trials=args.trials, seed=seed, max_jobs=args.max_jobs)
    _report(rep.to_dict(), args, f"prop1_J{args.J}")
    return 0 if rep.passed else 1


def _law_from_args(args):
    if args.law == "unit-uniform":
        return law_from_dict({"kind": "unit-uniform"})
    if args.law == "uniform":
        return law_from_dict({"kind": "uniform", "a": args.a, "b": args.b})
    if not args.sizes:
        raise InputError("--law discrete needs --sizes")
    probs = args.probs or [str(Fraction(1, len(args.sizes)))] * len(args.sizes)
    return law_from_dict({"kind": "discrete", "values": args.sizes, "probs": probs})


def cmd_bounds(args) -> int:
    law = _law_from_args(args)
    rows = []
    parts = [("quantile", n, quantile_partition(law, n)) for n in args.n or []]
    parts += [("universal", J, universal_partition(J)) for J in args.J or []]
    if not parts:
        raise InputError("give at least one --n or --J")
    for kind, n, part in parts:
        b = rounded_bounds(part, law, args.L)
        rows.append({
            "partition": kind, "n_or_J": n, "types": part.n_types,
            "upper_rounded": str(b.upper_rounded), "upper_decimal": float(b.upper_rounded),
            "lower_rounded": "inf" if b.lower_unbounded else str(b.lower_rounded),
            "lower_decimal": "inf" if b.lower_unbounded else float(b.lower_rounded),
        })
    _report(rows, args, "bounds")
    return 0


def cmd_trace_prep(args) -> int:
    try:
        tr = trace_prepare(Path(args.input), slot_ms=args.slot_ms, scaling=args.scaling, capacity=args.capacity)
    except OSError as exc:
        raise InputError(f"{args.input}: {exc.strerror or exc}") from None
    except TraceError as exc:
        raise InputError(f"{args.input}: {exc}") from None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = Path(args.input).stem
        tr.write(out / f"{stem}_prepared.csv", out / f"{stem}_report.json")
    else:
        sys.stdout.write(tr.to_csv())
    rep = tr.report
    print(f"kept {rep['kept']} of {rep['rows']} rows; {len(rep['dropped_size'])} out of range, "
          f"{len(rep['malformed'])} malformed", file=sys.stderr)
    return 0


def _report(obj, args, stem: str) -> None:
    if args.format == "json":
        text = json.dumps(obj, indent=2) + "\n"
    else:
        text = _table_csv(obj if isinstance(obj, list) else [_flat(obj)])
    sys.stdout.write(text)
    if args.out:
        _write_all(Path(args.out), {f"{stem}.{args.format}": text})


def _flat(d: dict) -> dict:
    return {k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in d.items()}


# -------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the base seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS, help="stdout format")

    p = argparse.ArgumentParser(prog="clustersched", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=None, help="override the base seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="stdout format")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario file")
    s.add_argument("file")
    s.add_argument("--reps", type=int, default=None, help="replications (default: from the file)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common], help="run a parameter sweep from a scenario file")
    s.add_argument("file")
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("oracle", parents=[common], help="exact maximum supportable workload")
    s.add_argument("--sizes", nargs="+", required=True, help="job sizes (fractions allowed, e.g. 2/5)")
    s.add_argument("--probs", nargs="+", help="type probabilities (default: equal)")
    s.add_argument("--L", type=int, default=1, help="number of servers")
    s.add_argument("--capacity", default="1", help="server capacity the sizes are measured in")
    s.add_argument("--restrict", nargs="+", metavar="K", help="restrict to configurations like 2,0 0,1")
    s.add_argument("--kred", type=int, metavar="J", help="also report the K_RED(J)-restricted value")
    s.add_argument("--mu", type=float, help="service rate; reports the arrival-rate threshold")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("kred", parents=[common], help="list the reduced configuration set")
    s.add_argument("--J", type=int, required=True)
    s.set_defaults(func=cmd_kred)

    s = sub.add_parser("prop1", parents=[common], help="randomized check of the 2/3 weight property")
    s.add_argument("--J", type=int, required=True)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--max-jobs", type=int, default=40)
    s.set_defaults(func=cmd_prop1)

    s = sub.add_parser("bounds", parents=[common], help="upper/lower rounded workload bounds")
    s.add_argument("--law", choices=("unit-uniform", "uniform", "discrete"), default="unit-uniform")
    s.add_argument("--a", default="0.1")
    s.add_argument("--b", default="0.9")
    s.add_argument("--sizes", nargs="+")
    s.add_argument("--probs", nargs="+")
    s.add_argument("--n", type=int, nargs="+", help="quantile partitions with 2**(n+1) subsets")
    s.add_argument("--J", type=int, nargs="+", help="universal partitions")
    s.add_argument("--L", type=int, default=1)
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("trace-prep", parents=[common], help="slot a raw task trace")
    s.add_argument("input")
    s.add_argument("--scaling", default="1", help="traffic scaling 1/beta (arrival times are divided by it)")
    s.add_argument("--slot-ms", default="100")
    s.add_argument("--capacity", type=float, default=1.0)
    s.set_defaults(func=cmd_trace_prep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
