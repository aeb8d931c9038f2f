"""Slot-level kernels shared by the simulator and the per-step scheduler API.

Everything here runs under ``numba.njit`` unless CLUSTERSCHED_DISABLE_NUMBA
is set, in which case the identical code runs as plain Python.

State layout (all int64):

* ``jobs[N, NJCOL]``: one row per job, ids in arrival order.
* ``srv[L, NSCOL]``: per-server packing load, load of the VQ1 job, true
  load, resident count, active K_RED row, departed-last-slot flag.
* waiting jobs sit on a global doubly linked list (arrival order) and on one
  list per virtual queue; two Fenwick trees over size ranks answer "largest
  waiting job no larger than r" globally and inside one virtual queue.
* ``dep_head[t]`` heads a singly linked list of jobs departing in slot t.
"""
from __future__ import annotations

from collections import namedtuple

import numpy as np

from ._accel import njit

# job columns
PACK, TRUE, VQ, STATUS, SERVER, DUR, CLS, GRANK, TRANK, GNEXT, GPREV, VNEXT, VPREV, DNEXT = range(14)
NJCOL = 14
PENDING, WAITING, SERVING, DONE = 0, 1, 2, 3

# server columns
LOAD, VQ1LOAD, TRUELOAD, NRES, CFG, DFLAG = range(6)
NSCOL = 6

# misc scalars
M_CAP, M_NWAIT, M_GHEAD, M_GTAIL, M_NSERV, M_NPLACED, M_FAULT, M_NDFLAG, M_BUSY, M_NARR, M_NDEP = range(11)
NMISC = 11

FIFO_FF, BF_JS, VQS, VQS_BF = 0, 1, 2, 3
POLICY_CODES = {"fifo-ff": FIFO_FF, "bf-js": BF_JS, "vqs": VQS, "vqs-bf": VQS_BF}

# accumulator slots
A_QTAIL, A_TAILSLOTS, A_BOTH, A_LOCK = range(4)
NACC = 4

SimState = namedtuple(
    "SimState",
    [
        "jobs", "srv", "rtype", "rcls", "qtype", "qcls", "vhead", "vtail", "misc",
        "g_sorted", "g_order", "t_sorted", "t_order", "t_lo", "fen_g", "fen_t",
        "kred", "kinfo", "dep_head", "dlist", "plog",
    ],
)


def build_state(pack, true, vq, dur, cls, L, n_types, kred, horizon, n_classes=0, cap=None):
    """Allocate a SimState for N jobs (all PENDING) and L empty servers."""
    from .model import GRID

    pack = np.asarray(pack, dtype=np.int64)
    N = pack.shape[0]
    ids = np.arange(N, dtype=np.int64)
    jobs = np.zeros((N, NJCOL), dtype=np.int64)
    jobs[:, PACK] = pack
    jobs[:, TRUE] = np.asarray(true, dtype=np.int64)
    jobs[:, VQ] = np.asarray(vq, dtype=np.int64)
    jobs[:, DUR] = np.asarray(dur, dtype=np.int64)
    jobs[:, CLS] = np.asarray(cls, dtype=np.int64)
    jobs[:, SERVER] = -1
    jobs[:, GNEXT:DNEXT + 1] = -1

    g_order = np.lexsort((-ids, pack)).astype(np.int64)
    jobs[g_order, GRANK] = np.arange(N, dtype=np.int64)
    nt = max(int(n_types), 1)
    t_lo = np.zeros(nt + 1, dtype=np.int64)
    if n_types > 0:
        if N and (jobs[:, VQ].min() < 0 or jobs[:, VQ].max() >= n_types):
            raise ValueError("virtual queue index out of range")
        t_order = np.lexsort((-ids, pack, jobs[:, VQ])).astype(np.int64)
        jobs[t_order, TRANK] = np.arange(N, dtype=np.int64)
        counts = np.bincount(jobs[:, VQ], minlength=n_types)
        t_lo[1:] = np.cumsum(counts)
    else:
        t_order = g_order.copy()
        jobs[:, TRANK] = -1

    kred = np.asarray(kred, dtype=np.int64).reshape(-1, nt) if len(kred) else np.zeros((1, nt), np.int64)
    kinfo = np.full((kred.shape[0], 3), -1, dtype=np.int64)
    for k in range(kred.shape[0]):
        row = kred[k]
        kinfo[k, 0] = row[1] if nt > 1 and n_types > 0 else 0
        others = [j for j in range(nt) if j != 1 and row[j] > 0]
        if len(others) > 1:
            raise ValueError("a reduced configuration holds more than one non-VQ1 type")
        if others:
            kinfo[k, 1] = others[0]
            kinfo[k, 2] = row[others[0]]

    misc = np.zeros(NMISC, dtype=np.int64)
    misc[M_CAP] = GRID if cap is None else cap
    misc[M_GHEAD] = -1
    misc[M_GTAIL] = -1
    srv = np.zeros((L, NSCOL), dtype=np.int64)
    h = max(int(horizon), 0)
    return SimState(
        jobs=jobs,
        srv=srv,
        rtype=np.zeros((L, nt), dtype=np.int64),
        rcls=np.zeros(max(int(n_classes), 1), dtype=np.int64),
        qtype=np.zeros(nt, dtype=np.int64),
        qcls=np.zeros(max(int(n_classes), 1), dtype=np.int64),
        vhead=np.full(nt, -1, dtype=np.int64),
        vtail=np.full(nt, -1, dtype=np.int64),
        misc=misc,
        g_sorted=pack[g_order].copy(),
        g_order=g_order,
        t_sorted=pack[t_order].copy(),
        t_order=t_order,
        t_lo=t_lo,
        fen_g=np.zeros(N + 1, dtype=np.int64),
        fen_t=np.zeros(N + 1, dtype=np.int64),
        kred=kred,
        kinfo=kinfo,
        dep_head=np.full(h + 1, -1, dtype=np.int64),
        dlist=np.zeros(L, dtype=np.int64),
        plog=np.zeros((N, 2), dtype=np.int64),
    )


# ------------------------------------------------------------ Fenwick trees


@njit
def _fen_add(f, rank, d):
    i = rank + 1
    n = f.shape[0] - 1
    while i <= n:
        f[i] += d
        i += i & (-i)


@njit
def _fen_prefix(f, i):
    """Number of marked ranks < i."""
    s = 0
    while i > 0:
        s += f[i]
        i -= i & (-i)
    return s


@njit
def _fen_kth(f, k):
    """Rank of the k-th marked element (k >= 1)."""
    n = f.shape[0] - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and f[nxt] < k:
            pos = nxt
            k -= f[nxt]
        step //= 2
    return pos


@njit
def _upper_bound(a, lo, hi, x):
    """First index in [lo, hi) with a[i] > x."""
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit
def _largest_fit(srt, order, fen, lo, hi, r):
    """Largest waiting job with size <= r among ranks [lo, hi); earliest id on ties."""
    if r <= 0 or lo >= hi:
        return -1
    p = _upper_bound(srt, lo, hi, r)
    c = _fen_prefix(fen, p)
    if c == _fen_prefix(fen, lo):
        return -1
    return order[_fen_kth(fen, c)]


# ------------------------------------------------------------ queue moves


@njit
def wait_push(S, j):
    jobs = S.jobs
    misc = S.misc
    jobs[j, STATUS] = WAITING
    tail = misc[M_GTAIL]
    jobs[j, GPREV] = tail
    jobs[j, GNEXT] = -1
    if tail >= 0:
        jobs[tail, GNEXT] = j
    else:
        misc[M_GHEAD] = j
    misc[M_GTAIL] = j
    _fen_add(S.fen_g, jobs[j, GRANK], 1)
    v = jobs[j, VQ]
    if v >= 0:
        vt = S.vtail[v]
        jobs[j, VPREV] = vt
        jobs[j, VNEXT] = -1
        if vt >= 0:
            jobs[vt, VNEXT] = j
        else:
            S.vhead[v] = j
        S.vtail[v] = j
        _fen_add(S.fen_t, jobs[j, TRANK], 1)
        S.qtype[v] += 1
    c = jobs[j, CLS]
    if c >= 0:
        S.qcls[c] += 1
    misc[M_NWAIT] += 1
    misc[M_NARR] += 1


@njit
def _wait_pop(S, j):
    jobs = S.jobs
    misc = S.misc
    p, n = jobs[j, GPREV], jobs[j, GNEXT]
    if p >= 0:
        jobs[p, GNEXT] = n
    else:
        misc[M_GHEAD] = n
    if n >= 0:
        jobs[n, GPREV] = p
    else:
        misc[M_GTAIL] = p
    _fen_add(S.fen_g, jobs[j, GRANK], -1)
    v = jobs[j, VQ]
    if v >= 0:
        p, n = jobs[j, VPREV], jobs[j, VNEXT]
        if p >= 0:
            jobs[p, VNEXT] = n
        else:
            S.vhead[v] = n
        if n >= 0:
            jobs[n, VPREV] = p
        else:
            S.vtail[v] = p
        _fen_add(S.fen_t, jobs[j, TRANK], -1)
        S.qtype[v] -= 1
    c = jobs[j, CLS]
    if c >= 0:
        S.qcls[c] -= 1
    misc[M_NWAIT] -= 1


@njit
def place(S, j, s, t):
    """Move waiting job j onto server s in slot t; False (and a fault) if it does not fit."""
    jobs = S.jobs
    srv = S.srv
    misc = S.misc
    pk = jobs[j, PACK]
    if jobs[j, STATUS] != WAITING or srv[s, LOAD] + pk > misc[M_CAP]:
        misc[M_FAULT] = j + 1
        return False
    _wait_pop(S, j)
    jobs[j, STATUS] = SERVING
    jobs[j, SERVER] = s
    srv[s, LOAD] += pk
    srv[s, TRUELOAD] += jobs[j, TRUE]
    srv[s, NRES] += 1
    misc[M_BUSY] += jobs[j, TRUE]
    v = jobs[j, VQ]
    if v >= 0:
        S.rtype[s, v] += 1
        if v == 1:
            srv[s, VQ1LOAD] += pk
    c = jobs[j, CLS]
    if c >= 0:
        S.rcls[c] += 1
    n = misc[M_NPLACED]
    if n < S.plog.shape[0]:
        S.plog[n, 0] = j
        S.plog[n, 1] = s
    misc[M_NPLACED] = n + 1
    misc[M_NSERV] += 1
    d = jobs[j, DUR]
    if d > 0:
        end = t + d - 1
        if end < S.dep_head.shape[0]:
            jobs[j, DNEXT] = S.dep_head[end]
            S.dep_head[end] = j
    return True


@njit
def depart(S, j):
    jobs = S.jobs
    srv = S.srv
    misc = S.misc
    s = jobs[j, SERVER]
    pk = jobs[j, PACK]
    srv[s, LOAD] -= pk
    srv[s, TRUELOAD] -= jobs[j, TRUE]
    srv[s, NRES] -= 1
    misc[M_BUSY] -= jobs[j, TRUE]
    v = jobs[j, VQ]
    if v >= 0:
        S.rtype[s, v] -= 1
        if v == 1:
            srv[s, VQ1LOAD] -= pk
    c = jobs[j, CLS]
    if c >= 0:
        S.rcls[c] -= 1
    jobs[j, STATUS] = DONE
    misc[M_NSERV] -= 1
    misc[M_NDEP] += 1
    if srv[s, DFLAG] == 0:
        srv[s, DFLAG] = 1
        S.dlist[misc[M_NDFLAG]] = s
        misc[M_NDFLAG] += 1


@njit
def clear_departure_flags(S):
    for i in range(S.misc[M_NDFLAG]):
        S.srv[S.dlist[i], DFLAG] = 0
    S.misc[M_NDFLAG] = 0


# ------------------------------------------------------------ policies


@njit
def fifo_ff_pass(S, t):
    srv = S.srv
    cap = S.misc[M_CAP]
    L = srv.shape[0]
    while True:
        j = S.misc[M_GHEAD]
        if j < 0:
            return
        pk = S.jobs[j, PACK]
        target = -1
        for s in range(L):
            if srv[s, LOAD] + pk <= cap:
                target = s
                break
        if target < 0:
            return
        if not place(S, j, target, t):
            return


@njit
def bf_s_server(S, s, t):
    """Fill server s with the largest fitting waiting job until none fits."""
    N = S.jobs.shape[0]
    cap = S.misc[M_CAP]
    while True:
        j = _largest_fit(S.g_sorted, S.g_order, S.fen_g, 0, N, cap - S.srv[s, LOAD])
        if j < 0:
            return
        if not place(S, j, s, t):
            return


@njit
def bf_j_job(S, j, t):
    """Put job j on the feasible server with the least residual capacity."""
    srv = S.srv
    cap = S.misc[M_CAP]
    pk = S.jobs[j, PACK]
    best = -1
    best_res = cap + 1
    for s in range(srv.shape[0]):
        res = cap - srv[s, LOAD]
        if pk <= res and res < best_res:
            best = s
            best_res = res
    if best >= 0:
        place(S, j, best, t)


@njit
def bf_js_pass(S, t, a0, a1):
    L = S.srv.shape[0]
    for s in range(L):
        if S.srv[s, DFLAG] != 0:
            bf_s_server(S, s, t)
    for j in range(a0, a1):
        if S.jobs[j, STATUS] == WAITING:
            bf_j_job(S, j, t)


@njit
def renew(S, s):
    """Set server s to the max-weight K_RED row (first one on ties)."""
    kred = S.kred
    q = S.qtype
    best = 0
    best_w = -1
    for k in range(kred.shape[0]):
        w = 0
        for i in range(kred.shape[1]):
            w += kred[k, i] * q[i]
        if w > best_w:
            best = k
            best_w = w
    S.srv[s, CFG] = best


@njit
def vqs_server(S, s, t):
    srv = S.srv
    cap = S.misc[M_CAP]
    if srv[s, NRES] == 0:
        renew(S, s)
    k = srv[s, CFG]
    with_vq1 = S.kinfo[k, 0] == 1
    if with_vq1 and S.rtype[s, 1] == 0:
        j = S.vhead[1]
        if j >= 0:
            # the job goes into the reserved two-thirds slice
            if 3 * S.jobs[j, PACK] > 2 * cap or not place(S, j, s, t):
                S.misc[M_FAULT] = j + 1
                return
    o = S.kinfo[k, 1]
    if o < 0:
        return
    while True:
        j = S.vhead[o]
        if j < 0:
            return
        pk = S.jobs[j, PACK]
        if with_vq1:
            if 3 * (srv[s, LOAD] - srv[s, VQ1LOAD] + pk) > cap:
                return
        elif srv[s, LOAD] + pk > cap:
            return
        if not place(S, j, s, t):
            return


@njit
def vqs_bf_server(S, s, t):
    srv = S.srv
    cap = S.misc[M_CAP]
    if srv[s, NRES] == 0:
        renew(S, s)
    k = srv[s, CFG]
    if S.kinfo[k, 0] == 1 and S.rtype[s, 1] == 0:
        j = _largest_fit(S.t_sorted, S.t_order, S.fen_t, S.t_lo[1], S.t_lo[2], cap - srv[s, LOAD])
        if j >= 0:
            if not place(S, j, s, t):
                return
    o = S.kinfo[k, 1]
    if o >= 0:
        want = S.kinfo[k, 2]
        while S.rtype[s, o] < want:
            j = _largest_fit(S.t_sorted, S.t_order, S.fen_t, S.t_lo[o], S.t_lo[o + 1], cap - srv[s, LOAD])
            if j < 0:
                break
            if not place(S, j, s, t):
                return
    bf_s_server(S, s, t)


@njit
def schedule_pass(S, policy, t, a0, a1):
    if policy == FIFO_FF:
        fifo_ff_pass(S, t)
    elif policy == BF_JS:
        bf_js_pass(S, t, a0, a1)
    elif policy == VQS:
        for s in range(S.srv.shape[0]):
            vqs_server(S, s, t)
            if S.misc[M_FAULT] != 0:
                return
    else:
        for s in range(S.srv.shape[0]):
            vqs_bf_server(S, s, t)
            if S.misc[M_FAULT] != 0:
                return


# ------------------------------------------------------------ slot loop


@njit
def _account(S, acc, t_first, n, tail_start, lock_cfg, check_lock):
    """Add n slots, starting at t_first, that all end in the current state."""
    if n <= 0:
        return
    lo = t_first if t_first > tail_start else tail_start
    hi = t_first + n
    if hi > lo:
        acc[A_QTAIL] += S.misc[M_NWAIT] * (hi - lo)
        acc[A_TAILSLOTS] += hi - lo
    if check_lock:
        for c in range(S.qcls.shape[0]):
            if S.qcls[c] == 0:
                return
        acc[A_BOTH] += n
        for c in range(S.rcls.shape[0]):
            if S.rcls[c] != lock_cfg[c]:
                return
        acc[A_LOCK] += n


@njit
def _sample(S, row, t, samp, samp_q, samp_srv, record_srv):
    misc = S.misc
    samp[row, 0] = t
    samp[row, 1] = misc[M_NWAIT]
    samp[row, 2] = misc[M_NARR]
    samp[row, 3] = misc[M_NDEP]
    samp[row, 4] = misc[M_NSERV]
    samp[row, 5] = misc[M_BUSY]
    for i in range(samp_q.shape[1]):
        samp_q[row, i] = S.qtype[i]
    if record_srv:
        for s in range(S.srv.shape[0]):
            samp_srv[row, s, 0] = S.srv[s, CFG]
            samp_srv[row, s, 1] = S.srv[s, NRES]
            samp_srv[row, s, 2] = S.srv[s, LOAD]
            samp_srv[row, s, 3] = S.srv[s, TRUELOAD]


@njit
def run_slots(S, policy, horizon, arr_ptr, sample_every, samp, samp_q, samp_srv, record_srv,
              acc, tail_start, lock_cfg, check_lock, check_every):
    """Simulate slots 0..horizon-1: arrivals, one scheduling pass, departures.

    Slots in which nothing can change (no arrivals, and neither departures nor
    placements in the previous slot) are skipped; their end state equals the
    previous one.  Returns (slots processed, fault job id + 1 or 0).
    """
    cap = S.misc[M_CAP]
    L = S.srv.shape[0]
    n_samples = samp.shape[0]
    next_row = 0
    last_t = -1
    prev_changed = False
    processed = 0
    next_check = check_every
    for t in range(horizon):
        a0 = arr_ptr[t]
        a1 = arr_ptr[t + 1]
        has_dep = S.dep_head[t] >= 0
        if a1 == a0 and not prev_changed and not has_dep:
            continue
        processed += 1
        # slots (last_t, t) kept the previous end state
        while next_row < n_samples and next_row * sample_every < t:
            _sample(S, next_row, next_row * sample_every, samp, samp_q, samp_srv, record_srv)
            next_row += 1
        _account(S, acc, last_t + 1, t - last_t - 1, tail_start, lock_cfg, check_lock)

        placed0 = S.misc[M_NPLACED]
        for j in range(a0, a1):
            wait_push(S, j)
        if a1 > a0 or prev_changed:
            schedule_pass(S, policy, t, a0, a1)
            if S.misc[M_FAULT] != 0:
                return processed, S.misc[M_FAULT]
        clear_departure_flags(S)
        nd = 0
        j = S.dep_head[t]
        while j >= 0:
            nxt = S.jobs[j, DNEXT]
            depart(S, j)
            nd += 1
            j = nxt
        S.dep_head[t] = -1
        prev_changed = nd > 0 or S.misc[M_NPLACED] > placed0

        if t >= next_check:
            for s in range(L):
                if S.srv[s, LOAD] > cap or S.srv[s, LOAD] < 0:
                    return processed, -1 - s
            next_check = t + check_every
        if next_row < n_samples and next_row * sample_every == t:
            _sample(S, next_row, t, samp, samp_q, samp_srv, record_srv)
            next_row += 1
        _account(S, acc, t, 1, tail_start, lock_cfg, check_lock)
        last_t = t
    while next_row < n_samples:
        _sample(S, next_row, next_row * sample_every, samp, samp_q, samp_srv, record_srv)
        next_row += 1
    _account(S, acc, last_t + 1, horizon - last_t - 1, tail_start, lock_cfg, check_lock)
    return processed, 0
