"""Hot inner loops with a compiled backend and a pure-Python fallback.

The Cython extension is used when it has been built; otherwise (or when the
``RECNET_PURE_PYTHON`` environment variable is set to a non-empty value) the
pure-Python implementation is selected at import time.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    if os.environ.get("RECNET_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from . import _ckernels
except ImportError:
    _ckernels = None

_impl: ModuleType = _ckernels if _ckernels is not None else _pykernels
BACKEND = "cython" if _ckernels is not None else "python"


def get_backend(name: str) -> ModuleType:
    """Return the kernel module named ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not available")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


pvdbow_epoch = _impl.pvdbow_epoch
hnsw_build = _impl.hnsw_build
hnsw_search = _impl.hnsw_search
hamming_distances = _impl.hamming_distances

__all__ = [
    "BACKEND",
    "get_backend",
    "pvdbow_epoch",
    "hnsw_build",
    "hnsw_search",
    "hamming_distances",
]
