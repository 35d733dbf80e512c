"""Backend switch for the numeric kernels.

``PREREQ_NUMBA=0`` forces the pure-numpy path; anything else uses numba
when it is importable.
"""
import os

try:
    from numba import njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


def numba_enabled() -> bool:
    return NUMBA_AVAILABLE and os.environ.get("PREREQ_NUMBA", "1").strip() not in ("0", "false", "no", "off")
