"""Kernel backend selection.

Hot loops in :mod:`qpsplit.kernels` are compiled with numba when it is
importable.  Setting ``QPSPLIT_DISABLE_NUMBA=1`` forces the pure-numpy
implementations; both paths return identical results.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("QPSPLIT_DISABLE_NUMBA", "").strip().lower()
NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")

JIT_OPTIONS = {"nogil": True, "cache": True}


def njit(func):
    """Compile ``func`` in nopython mode, or return it unchanged without numba."""
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(**JIT_OPTIONS)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def set_num_threads(n):
    # touching the thread count starts numba's threading layer; skip the default
    if NUMBA_AVAILABLE and n and int(n) > 1:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
