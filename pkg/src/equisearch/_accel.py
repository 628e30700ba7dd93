"""Backend selection for the hot kernels.

Kernels are compiled with numba's ``@njit`` unless ``EQUISEARCH_DISABLE_NUMBA``
is set to a truthy value (or numba is not importable), in which case the
pure-numpy implementations run instead. :func:`use_backend` switches at
runtime, which the benchmarks use to compare both paths in one process.
"""

from __future__ import annotations

import contextlib
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FALSY = {"", "0", "false", "no", "off"}

NUMBA_AVAILABLE = numba is not None
_backend = "numpy" if (
    not NUMBA_AVAILABLE or os.environ.get("EQUISEARCH_DISABLE_NUMBA", "").strip().lower() not in _FALSY
) else "numba"


def njit(fn):
    """``numba.njit(cache=True)`` when available, else the plain function."""
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)
