"""JIT switch for the simulation kernels.

Set ``CLUSTERSCHED_DISABLE_NUMBA=1`` to run every kernel as plain
Python/NumPy.  Both paths execute the same source, so results are
bit-identical; only speed differs.
"""
from __future__ import annotations

import os

DISABLED = os.environ.get("CLUSTERSCHED_DISABLE_NUMBA", "").strip() not in ("", "0")

try:
    if DISABLED:
        raise ImportError
    from numba import njit as _numba_njit

    HAS_NUMBA = True
except ImportError:
    _numba_njit = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if _numba_njit is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _numba_njit(*args, **kwargs)


def backend() -> str:
    return "numba" if HAS_NUMBA else "python"
