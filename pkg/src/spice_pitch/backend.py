"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports cleanly; the
numpy implementations in ``_reference`` are used otherwise. Setting
``SPICE_PURE_PYTHON=1`` forces the numpy path.
"""

import os

from . import _reference

_FORCE_PURE = os.environ.get("SPICE_PURE_PYTHON", "").strip() not in ("", "0")

try:
    if _FORCE_PURE:
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

kernels = _compiled if _compiled is not None else _reference
NAME = "cython" if _compiled is not None else "numpy"


def compiled_available():
    return _compiled is not None


def get(name):
    """Return the kernel module called ``name`` ("cython" or "numpy")."""
    if name == "numpy":
        return _reference
    if name == "cython":
        if _compiled is not None:
            return _compiled
        # importable even when the numpy path was forced for the default
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
