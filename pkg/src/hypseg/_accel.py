"""Backend switch for the compiled kernels.

Set ``HYPSEG_NUMBA=0`` before import to force the pure-numpy paths. Each hot
kernel exists twice: a loop version compiled with ``numba.njit`` and a
vectorized numpy version. ``tests/test_backends.py`` checks they agree and
``benchmarks/bench_kernels.py`` times them against each other.
"""
import os

_flag = os.environ.get("HYPSEG_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

NUMBA_ENABLED = False
if _wanted:
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover
        pass


def jit(fn):
    """Compile ``fn`` with numba when enabled; otherwise return it untouched."""
    if NUMBA_ENABLED:
        return _njit(cache=True, nogil=True)(fn)
    return fn


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
