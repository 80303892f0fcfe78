"""JIT switch for the hot kernels.

Kernels in :mod:`zson.kernels` are written as plain loops over numpy arrays.
When numba is importable and ``ZSON_NUMBA`` is not set to a false value they
are compiled with ``numba.njit``; otherwise the very same functions run as
interpreted numpy code. Both paths must produce identical results, which the
test-suite checks by running the interpreted versions via ``.py_func``.
"""

from __future__ import annotations

import os

_FALSE = {"0", "false", "no", "off"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

USE_NUMBA = numba is not None and os.environ.get("ZSON_NUMBA", "1").strip().lower() not in _FALSE


def jit(fn):
    """Compile ``fn`` with numba when enabled; keep the original as ``py_func``."""
    if not USE_NUMBA:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
