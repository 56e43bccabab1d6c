"""Selects the compiled LRU kernel when available, else the pure-Python one.

Set ``CARGOSIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _lru_py

if os.environ.get("CARGOSIM_PURE_PYTHON") == "1":
    LRUCache = _lru_py.LRUCache
    BACKEND = "python"
else:
    try:
        from ._lru import LRUCache  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        LRUCache = _lru_py.LRUCache
        BACKEND = "python"

PyLRUCache = _lru_py.LRUCache

__all__ = ["LRUCache", "PyLRUCache", "BACKEND"]
