"""Time the slot kernels under numba and under the pure-Python fallback.

Each backend runs in its own interpreter because the switch is read at
import time.  The numba timing excludes JIT compilation (one warm-up run),
and the script checks that both backends give the same CSV.

    python3 benchmarks/bench_kernels.py [--horizon N] [--policies ...]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import hashlib, json, sys, time
from clustersched._accel import backend
from clustersched.sim import Scenario, run
horizon, policies = int(sys.argv[1]), sys.argv[2:]
out = {"backend": backend(), "runs": {}}
for pol in policies:
    scn = Scenario(policy=pol, servers=5, alpha=0.9, sizes={"kind": "uniform", "a": "0.1", "b": "0.9"},
                   mu=0.01, horizon=horizon, sample_every=max(1, horizon // 1000), seed=1)
    if backend() == "numba":
        run(scn.with_seed(2))  # compile outside the timed region
    t0 = time.perf_counter()
    m = run(scn)
    dt = time.perf_counter() - t0
    out["runs"][pol] = {"seconds": dt, "slots_per_s": horizon / dt,
                        "csv_sha256": hashlib.sha256(m.to_csv().encode()).hexdigest()}
print(json.dumps(out))
"""


def measure(disable: bool, horizon: int, policies: list[str]) -> dict:
    env = dict(os.environ, CLUSTERSCHED_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", CHILD, str(horizon), *policies], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--horizon", type=int, default=200000, help="slots per run")
    p.add_argument("--policies", nargs="+", default=["fifo-ff", "bf-js", "vqs", "vqs-bf"])
    args = p.parse_args(argv)

    fast = measure(False, args.horizon, args.policies)
    slow = measure(True, args.horizon, args.policies)
    print(f"{'policy':8s} {'numba s':>9s} {'python s':>9s} {'speedup':>8s}  same output")
    same_all = True
    for pol in args.policies:
        a, b = fast["runs"][pol], slow["runs"][pol]
        same = a["csv_sha256"] == b["csv_sha256"]
        same_all &= same
        print(f"{pol:8s} {a['seconds']:9.3f} {b['seconds']:9.3f} {b['seconds'] / a['seconds']:7.1f}x  {same}")
    if fast["backend"] != "numba":
        print("note: numba is not installed, both columns use the fallback")
    return 0 if same_all else 1


if __name__ == "__main__":
    sys.exit(main())
