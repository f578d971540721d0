"""Optional numba acceleration.

Set ``LEO_HANDOVER_NO_NUMBA=1`` to force the pure-numpy code paths.  Both paths
are always importable so the test-suite can compare them against each other.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("LEO_HANDOVER_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

NUMBA_OPTS = {"cache": True, "nogil": True}


def njit(func):
    """``numba.njit`` when available, identity otherwise."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(func, **NUMBA_OPTS)


def pick(fast, slow):
    """Return the kernel selected by the environment flag."""
    return fast if USE_NUMBA else slow
