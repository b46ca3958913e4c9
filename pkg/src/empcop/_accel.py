"""Backend selection for the numeric kernels.

Numba is used when it imports cleanly and ``EMPCOP_DISABLE_NUMBA`` is not
set to a truthy value. Otherwise every kernel falls back to its numpy
counterpart in :mod:`empcop._kernels`.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}

NUMBA_REQUESTED = os.environ.get("EMPCOP_DISABLE_NUMBA", "").strip().lower() in _FALSY

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and NUMBA_REQUESTED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    Kernels are always compiled when numba exists so the benchmark can
    compare both paths in one process; ``USE_NUMBA`` only decides which
    implementation the public functions dispatch to.
    """
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
