"""Select the compiled kernels when available, else the NumPy fallback.

Set ``BIPHOTON_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pycore

BACKEND = "python"
_impl = _pycore

if not os.environ.get("BIPHOTON_PURE_PYTHON"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pycore
    else:
        BACKEND = "cython"

correlate_counts = _impl.correlate_counts
dead_time_mask = _impl.dead_time_mask
ar1_complex = _impl.ar1_complex

__all__ = ["BACKEND", "correlate_counts", "dead_time_mask", "ar1_complex"]
