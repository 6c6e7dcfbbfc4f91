"""Backend selection for the hot numeric kernels.

``WJKO_BACKEND=numpy`` forces the pure-numpy path; the default uses numba
when it imports cleanly.
"""
import os

from . import numpy_impl

BACKEND = os.environ.get("WJKO_BACKEND", "numba").strip().lower()

if BACKEND == "numba":
    try:
        from . import numba_impl as _impl
    except ImportError:  # pragma: no cover - numba missing
        BACKEND = "numpy"
        _impl = numpy_impl
elif BACKEND == "numpy":
    _impl = numpy_impl
else:
    raise ImportError(f"WJKO_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

gen_entropy_root = _impl.gen_entropy_root
grid_edges = _impl.grid_edges

__all__ = ["BACKEND", "gen_entropy_root", "grid_edges", "numpy_impl"]
