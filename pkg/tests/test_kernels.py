"""Kernel slot loop against the list-based reference simulator."""
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from clustersched import kernels as K
from clustersched.partition import universal_partition
from clustersched.schedulers import kred_matrix
from reference_sim import reference_run

POLICIES = ["fifo-ff", "bf-js", "vqs", "vqs-bf"]


def kernel_rows(pack, true, vq, dur, arr_ptr, L, policy, kred, T, n_types):
    S = K.build_state(pack, true, vq, dur, np.full(len(pack), -1), L, n_types, kred, T)
    samp = np.zeros((T, 6), np.int64)
    samp_q = np.zeros((T, n_types), np.int64)
    samp_srv = np.zeros((T, L, 4), np.int64)
    acc = np.zeros(K.NACC, np.int64)
    _, fault = K.run_slots(S, K.POLICY_CODES[policy], T, arr_ptr, 1, samp, samp_q, samp_srv, True, acc, 0,
                           np.zeros(1, np.int64), False, 1)
    assert fault == 0
    return samp, samp_q, samp_srv


def random_workload(rng, n_slots, lam, sizes, gran):
    counts = rng.poisson(lam, n_slots)
    n = int(counts.sum())
    x = rng.choice(sizes, n) if sizes is not None else rng.integers(1, gran + 1, n) / gran
    true = np.rint(x * 10**12).astype(np.int64)
    dur = rng.integers(1, 12, n)
    arr_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return true, dur, arr_ptr


def compare(policy, seed, L=2, T=150, lam=0.6, sizes=None, gran=20, J=3):
    rng = np.random.default_rng(seed)
    true, dur, arr_ptr = random_workload(rng, T, lam, sizes, gran)
    if policy in ("vqs", "vqs-bf"):
        part = universal_partition(J)
        vq, pack = part.classify_units(true) if len(true) else (np.zeros(0, np.int64), true)
        kred, n_types = kred_matrix(J), part.n_types
    else:
        vq, pack, kred, n_types = np.full(len(true), -1), true, np.zeros((0, 0), np.int64), 0
    samp, samp_q, samp_srv = kernel_rows(pack, true, vq, dur, arr_ptr, L, policy, kred, T, n_types)
    ref = reference_run(pack, true, vq, dur, arr_ptr, L, policy, kred.tolist(), T)
    for t, row in enumerate(ref):
        q, a, d, ns, busy, qt, srv = row
        assert tuple(samp[t, 1:6]) == (q, a, d, ns, busy), (policy, t)
        assert tuple(samp_q[t]) == qt
        got_srv = tuple((int(c), int(n), int(p)) for c, n, p, _ in samp_srv[t])
        if policy in ("vqs", "vqs-bf"):
            assert got_srv == srv, (policy, t)
        else:
            assert tuple(g[1:] for g in got_srv) == tuple(s[1:] for s in srv)


@pytest.mark.parametrize("policy", POLICIES)
@pytest.mark.parametrize("seed", range(6))
def test_matches_reference_continuous_sizes(policy, seed):
    compare(policy, seed, L=1 + seed % 3)


@pytest.mark.parametrize("policy", POLICIES)
def test_matches_reference_two_sizes(policy):
    compare(policy, 11, L=1, T=400, lam=0.4, sizes=np.array([0.4, 0.6]), J=2)
    compare(policy, 12, L=2, T=300, lam=0.9, sizes=np.array([0.2, 0.5]), J=3)


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.sampled_from(POLICIES), st.integers(0, 10**6), st.integers(1, 3), st.floats(0.1, 1.5),
       st.integers(2, 4))
def test_matches_reference_property(policy, seed, L, lam, J):
    compare(policy, seed, L=L, T=80, lam=lam, gran=40, J=J)


def test_fenwick_largest_fit():
    srt = np.array([1, 3, 3, 5, 8], np.int64)
    order = np.arange(5, dtype=np.int64)
    fen = np.zeros(6, np.int64)
    for r in (0, 1, 2, 4):
        K._fen_add(fen, r, 1)
    assert K._largest_fit(srt, order, fen, 0, 5, 7) == 2
    assert K._largest_fit(srt, order, fen, 0, 5, 0) == -1
    assert K._largest_fit(srt, order, fen, 3, 5, 7) == -1
    assert K._largest_fit(srt, order, fen, 0, 5, 100) == 4


FALLBACK_SCRIPT = """
from clustersched._accel import backend
from clustersched.sim import Scenario, run
out = []
for pol in ["fifo-ff", "bf-js", "vqs", "vqs-bf"]:
    m = run(Scenario(policy=pol, servers=3, rate=0.05, sizes={"kind": "uniform", "a": "0.05", "b": "0.9"},
                     mu=0.02, horizon=20000, sample_every=50, seed=9))
    out.append(m.to_csv())
print(backend())
print("".join(out))
"""


def test_fallback_matches_numba_bit_for_bit():
    pytest.importorskip("numba")
    runs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, CLUSTERSCHED_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", FALLBACK_SCRIPT], capture_output=True, text=True, env=env,
                             check=True, timeout=600)
        backend, _, text = res.stdout.partition("\n")
        runs[backend] = text
    assert set(runs) == {"numba", "python"}
    assert runs["numba"] == runs["python"]
