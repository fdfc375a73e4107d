"""Kernel backend selection.

Hot loops are compiled with numba when it is importable. Setting
``DIFFGOF_BACKEND=numpy`` (or ``DIFFGOF_DISABLE_NUMBA=1``) forces the
pure-numpy implementations, which compute the same quantities.
"""
import os

_requested = os.environ.get("DIFFGOF_BACKEND", "").strip().lower()
_disabled = os.environ.get("DIFFGOF_DISABLE_NUMBA", "").strip() not in ("", "0")

try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    njit = None

USE_NUMBA = HAVE_NUMBA and not _disabled and _requested != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(func):
    """Compile ``func`` with numba if available, else return it unchanged."""
    if HAVE_NUMBA:
        return njit(cache=True, nogil=True)(func)
    return func
