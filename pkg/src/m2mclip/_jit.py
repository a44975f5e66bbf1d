"""Optional numba acceleration.

Set ``M2M_NUMBA=0`` to force the pure-numpy kernels. The flag is read once at
import time; both paths implement identical contracts.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

USE_NUMBA = numba is not None and os.environ.get("M2M_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def njit(func):
    if numba is None:
        return func
    return numba.njit(cache=True)(func)


def set_threads(n: int) -> None:
    """Cap BLAS worker threads. The jitted kernels are serial, so numba needs no cap."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return
    threadpool_limits(n)
