"""Backend selection for the hot loops.

Set ``MAGRNN_NO_NUMBA=1`` to force the vectorized numpy kernels even when
numba is importable.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("MAGRNN_NO_NUMBA", "0").lower() not in ("1", "true", "yes")


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if NUMBA_AVAILABLE:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
