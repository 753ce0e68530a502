"""Backend selection for the hot kernels.

The walk inner loops and the resampler are written twice: a numba @njit
version and a pure-numpy/python twin with identical semantics.  Set
``DISCFORGE_BACKEND=numpy`` to force the fallback (useful for debugging and
for machines without a working numba toolchain); anything else, or an
unavailable numba, selects numba when importable.

``benchmarks/bench_backends.py`` times the two paths against each other.
"""

import os

_requested = os.environ.get("DISCFORGE_BACKEND", "numba").strip().lower()

if _requested == "numpy":
    NUMBA_ENABLED = False
else:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - exercised only without numba
        NUMBA_ENABLED = False


def jit_or_fallback(njit_impl, py_impl):
    """Return the numba implementation when enabled, else the python twin."""
    return njit_impl if NUMBA_ENABLED else py_impl
