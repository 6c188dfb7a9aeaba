"""JIT compilation shim for the numeric kernels.

Every hot kernel in the package is written once, in plain numpy, and
decorated with :func:`jit`. When numba is importable and the environment
variable ``NAVFUSE_NUMBA`` is unset (or anything other than ``0``/``false``/
``off``/``no``), the decorator is ``numba.njit(cache=True)`` and the kernels
run compiled. Setting ``NAVFUSE_NUMBA=0`` turns :func:`jit` into an identity
decorator, so the exact same source executes as ordinary numpy code. The
flag is read once at import time.

``benchmarks/bench_kernels.py`` times the two modes against each other.
"""

from __future__ import annotations

import os

__all__ = ["jit", "NUMBA_ENABLED"]


def _numba_requested() -> bool:
    flag = os.environ.get("NAVFUSE_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


NUMBA_ENABLED = False

if _numba_requested():
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:  # numba not installed: silently fall back
        _njit = None

if NUMBA_ENABLED:

    def jit(func=None, **options):
        """Compile ``func`` with ``numba.njit(cache=True, **options)``."""
        options.setdefault("cache", True)
        if func is None:
            return lambda f: _njit(**options)(f)
        return _njit(**options)(func)

else:

    def jit(func=None, **options):  # noqa: ARG001 - mirror the numba signature
        """Identity decorator: run the kernel as plain numpy."""
        if func is None:
            return lambda f: f
        return func
