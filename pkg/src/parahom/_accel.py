"""Backend selection for the compiled kernels.

Set ``PARAHOM_DISABLE_NUMBA=1`` to force the pure numpy/scipy path. The flag
is read at call time so tests and benchmarks can flip it per process or via
:func:`use_numba`.
"""
from __future__ import annotations

import contextlib
import os

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None

ENV_FLAG = "PARAHOM_DISABLE_NUMBA"
_override: bool | None = None


def numba_available() -> bool:
    return _nb is not None


def numba_enabled() -> bool:
    if _nb is None:
        return False
    if _override is not None:
        return _override
    return os.environ.get(ENV_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


@contextlib.contextmanager
def use_numba(flag: bool):
    """Temporarily force the backend (``True`` compiled, ``False`` numpy)."""
    global _override
    old = _override
    _override = bool(flag)
    try:
        yield
    finally:
        _override = old


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator without numba."""
    kwargs.setdefault("cache", True)
    if _nb is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return _nb.njit(*args, **kwargs)


def backend_name() -> str:
    return "numba" if numba_enabled() else "numpy"
