"""Compile switch for the numeric kernels.

Kernels are written once as plain Python over numpy arrays and scalar
tuples.  By default they are compiled with ``numba.njit``; setting
``RLTRANSPORT_PURE_PYTHON=1`` (or running without numba installed) keeps
them as ordinary Python functions, which is slow but useful for debugging
and for the benchmark that compares both paths.
"""
import os

PURE_PYTHON = os.environ.get("RLTRANSPORT_PURE_PYTHON", "0").lower() not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_ENABLED = numba is not None and not PURE_PYTHON


def njit(fn=None, **options):
    """``numba.njit(cache=True, nogil=True)`` or the identity, per the switch."""
    def wrap(f):
        if not JIT_ENABLED:
            return f
        kw = {"cache": True, "nogil": True}
        kw.update(options)
        return numba.njit(**kw)(f)

    if fn is not None:
        return wrap(fn)
    return wrap
