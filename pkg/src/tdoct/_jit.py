"""Optional numba acceleration.

Set ``TDOCT_DISABLE_NUMBA=1`` before import to run every kernel as plain
numpy/Python. Both paths execute the same source; only the primitives in
:mod:`tdoct.kernels` that benefit from explicit loops have two bodies.
"""
import os

_flag = os.environ.get("TDOCT_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = _flag not in ("1", "true", "yes", "on")

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:

    def jit(func):
        return _njit(cache=True, nogil=True)(func)

else:

    def jit(func):
        return func


BACKEND = "numba" if USE_NUMBA else "numpy"
