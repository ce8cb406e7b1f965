"""Convolution kernel backends.

Two interchangeable implementations of the same six functions: a compiled
Cython core and a pure-numpy fallback.  The compiled core is preferred when
it imported cleanly; ``MODERNN_KERNELS=python|cython|auto`` overrides the
choice (``cython`` fails loudly if the extension is missing).
"""

from __future__ import annotations

import os

from . import numpy_backend


def _select():
    forced = os.environ.get("MODERNN_KERNELS", "auto")
    if forced not in ("auto", "cython", "python"):
        raise RuntimeError(f"MODERNN_KERNELS must be auto, cython or python, got {forced!r}")
    if forced == "python":
        return numpy_backend, "python"
    try:
        from . import _convkernels
    except ImportError:
        if forced == "cython":
            raise
        return numpy_backend, "python"
    return _convkernels, "cython"


_impl, BACKEND = _select()

conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd_input = _impl.conv2d_bwd_input
conv2d_bwd_kernel = _impl.conv2d_bwd_kernel
dwconv2d_fwd = _impl.dwconv2d_fwd
dwconv2d_bwd_input = _impl.dwconv2d_bwd_input
dwconv2d_bwd_kernel = _impl.dwconv2d_bwd_kernel


def available_backends() -> list[str]:
    names = ["python"]
    try:
        from . import _convkernels  # noqa: F401
    except ImportError:
        return names
    return names + ["cython"]


def get_backend(name: str):
    """Return the backend module for ``name`` regardless of the active one."""
    if name == "python":
        return numpy_backend
    if name == "cython":
        from . import _convkernels

        return _convkernels
    raise ValueError(f"unknown kernel backend {name!r}")
