"""Optional numba acceleration.

Hot kernels are written twice: an explicit-loop version compiled with numba and a
vectorized numpy/scipy version. ``DAWSOL_DISABLE_NUMBA=1`` in the environment
selects the numpy versions at import time.
"""

import os

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("DAWSOL_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")


def jit(func):
    if NUMBA_AVAILABLE:
        return njit(cache=True, nogil=True)(func)
    return func
