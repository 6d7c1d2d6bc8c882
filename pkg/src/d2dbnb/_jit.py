"""Numba toggle for the numeric kernels.

Set ``D2DBNB_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
path. Both paths implement the same algorithm; the numpy one exists for
debugging and for environments where numba cannot compile.
"""
import os

NUMBA_DISABLED = os.environ.get("D2DBNB_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover
    _njit = None
    NUMBA_DISABLED = True

USE_NUMBA = not NUMBA_DISABLED


def njit(func):
    """Compile ``func`` with numba (cached), regardless of the env flag."""
    if _njit is None:  # pragma: no cover
        return func
    return _njit(cache=True)(func)
