"""
Switch between numba-compiled kernels and their pure-numpy counterparts.

Set ``KFA_USE_NUMBA=0`` in the environment before import to force the numpy
path (useful for debugging and for the benchmark comparison). Both paths are
always importable so that tests can check them against each other.
"""

import os

# numba's TBB layer probing warns on older TBB builds; the built-in workqueue
# layer is always available and enough for the flat loops used here.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("KFA_USE_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)

if NUMBA_AVAILABLE:
    njit = _numba.njit
    prange = _numba.prange
else:  # pragma: no cover

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper

    prange = range
