"""Optional numba acceleration.

Set ``TRANSFERNET_NUMBA=0`` before import to force the pure-numpy kernels.
"""
import os

_flag = os.environ.get("TRANSFERNET_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    if not _wanted:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False


def njit(func):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if HAS_NUMBA:
        return _njit(cache=True)(func)
    return func


def backend():
    return "numba" if HAS_NUMBA else "numpy"
