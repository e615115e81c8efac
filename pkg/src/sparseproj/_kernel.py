"""Selects the block coordinate descent backend at import.

The compiled ``_bcd`` extension is used when it imports; setting
``SPARSEPROJ_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
import os

from . import _bcd_py

BACKEND = "python"
_impl = _bcd_py

if os.environ.get("SPARSEPROJ_PURE_PYTHON", "") != "1":
    try:
        from . import _bcd as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

KIND_GL = _bcd_py.KIND_GL
KIND_SCAD = _bcd_py.KIND_SCAD


def get_backend(name=None):
    """Kernel module by name (``"cython"`` or ``"python"``); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _bcd_py
    if name == "cython":
        from . import _bcd

        return _bcd
    raise ValueError(f"unknown backend {name!r}")


def solve(*args, backend=None):
    return get_backend(backend).solve(*args)


def kkt_value(*args, backend=None):
    return get_backend(backend).kkt_value(*args)
