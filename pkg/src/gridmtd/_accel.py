"""Optional numba acceleration.

Hot kernels are written twice: once as plain loops compiled with ``numba.njit``
and once as vectorised numpy.  Setting ``GRIDMTD_DISABLE_NUMBA=1`` in the
environment (or running without numba installed) selects the numpy versions.
"""

from __future__ import annotations

import os

_FLAG = "GRIDMTD_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in {"1", "true", "yes", "on"}


try:
    if not _numba_requested():
        raise ImportError("numba disabled by environment")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via subprocess in tests
    _njit = None
    HAVE_NUMBA = False


def njit(func):
    """Compile ``func`` with numba when enabled, otherwise return it untouched."""
    if HAVE_NUMBA:
        return _njit(cache=True, nogil=True)(func)
    return func


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
