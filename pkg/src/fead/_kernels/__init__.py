"""Segment-op kernels with a compiled core and a numpy fallback.

Backend selection happens once at import: the Cython extension when it is
built, otherwise the numpy implementation. ``FEAD_KERNELS=python|cython``
forces one side (useful for the benchmark and the equivalence tests).
"""

import os

from . import pykernels

_requested = os.environ.get("FEAD_KERNELS", "auto").lower()

if _requested not in ("auto", "python", "cython"):
    raise ImportError(f"FEAD_KERNELS must be auto, python or cython, got {_requested!r}")

if _requested == "python":
    _impl = pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = pykernels

segment_sum = _impl.segment_sum
segment_max = _impl.segment_max


def active_backend():
    """Name of the backend in use: 'cython' or 'python'."""
    return "python" if _impl is pykernels else "cython"
