"""Pick the compiled kernels when importable, else the numpy fallback.

Set ``NEXTEVENT_BACKEND=python`` to force the fallback, or ``=cython`` to
make a missing extension an error.
"""
from __future__ import annotations

import importlib
import os
from types import ModuleType

from . import _pykernels


def load(name: str | None = None) -> ModuleType:
    name = (name or os.environ.get("NEXTEVENT_BACKEND", "auto")).lower()
    if name == "python":
        return _pykernels
    try:
        return importlib.import_module("nextevent._kernels")
    except ImportError:
        if name == "cython":
            raise
        return _pykernels


kernels = load()
BACKEND = "python" if kernels is _pykernels else "cython"


def get(name: str) -> ModuleType:
    """Kernel module by name ('python' or 'cython'); used by tests and benchmarks."""
    if name == "python":
        return _pykernels
    return importlib.import_module("nextevent._kernels")
