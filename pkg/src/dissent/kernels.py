"""Backend selection for the per-example kernels.

The compiled extension is used when it imports; setting
``DISSENT_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("DISSENT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

rank_sums = _impl.rank_sums
agreement = _impl.agreement

__all__ = ["BACKEND", "rank_sums", "agreement"]
