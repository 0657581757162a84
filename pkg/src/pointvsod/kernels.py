"""Kernel dispatch: the compiled extension when it imports, else the Python reference.

Set ``POINTVSOD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("POINTVSOD_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

flood_region = _impl.flood_region
gcrf_loss_grad = _impl.gcrf_loss_grad
