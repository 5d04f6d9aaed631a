"""
Optional numba acceleration.

Set ``ENSVERIFY_NO_NUMBA=1`` to run every kernel as plain numpy code. The
flag is read once, at import time.
"""
import os

_DISABLED = os.environ.get("ENSVERIFY_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by ENSVERIFY_NO_NUMBA")
    from numba import njit as _numba_njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAS_NUMBA:
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(func):
        return func

    return wrapper


BACKEND = "numba" if HAS_NUMBA else "numpy"
