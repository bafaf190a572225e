"""Kernel backend selection.

The hot loops in :mod:`replica_decay._kernels` are written once and either
JIT-compiled with numba (default) or executed as plain Python, selected by the
environment variable ``REPLICA_DECAY_BACKEND``:

    REPLICA_DECAY_BACKEND=numba    force numba (ImportError if unavailable)
    REPLICA_DECAY_BACKEND=python   force the pure-Python/numpy fallback

Unset: numba if importable, otherwise the fallback with a logged warning.
Both backends consume identical RNG streams, so results are bit-for-bit equal.
"""

import functools
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

_requested = os.environ.get("REPLICA_DECAY_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "python"):
    raise ValueError(
        f"REPLICA_DECAY_BACKEND must be 'numba' or 'python', got {_requested!r}"
    )

if _requested == "python":
    USE_NUMBA = False
else:
    try:
        import numba

        USE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise
        USE_NUMBA = False
        logger.warning("numba not available; falling back to the pure-Python backend")

BACKEND = "numba" if USE_NUMBA else "python"


def jit(**options):
    """Return the backend decorator for a hot kernel.

    numba: ``njit(cache=True, nogil=True)`` so replications can run on a thread
    pool. Python: wrap in ``np.errstate(over='ignore')`` because the xoshiro
    state updates rely on uint64 wraparound, which numpy scalars warn about.
    """
    if USE_NUMBA:
        options.setdefault("cache", True)
        options.setdefault("nogil", True)
        return numba.njit(**options)

    def plain(fn):
        @functools.wraps(fn)
        def wrapper(*args):
            with np.errstate(over="ignore"):
                return fn(*args)

        return wrapper

    return plain


def jit_inline(fn):
    """Decorator for tiny helpers called from inside kernels."""
    if USE_NUMBA:
        return numba.njit(inline="always")(fn)
    return fn
