"""Kernel backend selection.

The compiled Cython core is used when it imports; otherwise the numpy
fallback.  Set ``MMAN_KERNELS=python`` to force the fallback.
"""
import os

from . import _pykernels

python_backend = _pykernels

if os.environ.get("MMAN_KERNELS", "").lower() == "python":
    _impl = _pykernels
    compiled_backend = None
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels
    compiled_backend = _impl if _impl is not _pykernels else None

BACKEND = _impl.BACKEND
conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool1d_forward = _impl.maxpool1d_forward
maxpool1d_backward = _impl.maxpool1d_backward
