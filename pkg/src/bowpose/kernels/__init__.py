"""Hot-loop kernels with a numba path and a pure-numpy fallback.

The numba path is the default. Set BOWPOSE_NO_NUMBA=1 before import to force
the numpy fallback (useful for debugging and for environments without a
working numba). The active backend name is exposed as BACKEND.
"""

import os

_disable = os.environ.get("BOWPOSE_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

if not _disable:
    try:
        from . import numba_impl as _impl
        BACKEND = "numba"
    except ImportError:
        from . import numpy_impl as _impl
        BACKEND = "numpy"
else:
    from . import numpy_impl as _impl
    BACKEND = "numpy"

rasterize = _impl.rasterize
warp_bilinear = _impl.warp_bilinear
warp_nearest = _impl.warp_nearest
gradient_descriptor = _impl.gradient_descriptor
gradient_grid = _impl.gradient_grid
nn_match = _impl.nn_match
assign_topk = _impl.assign_topk

__all__ = [
    "BACKEND",
    "rasterize",
    "warp_bilinear",
    "warp_nearest",
    "gradient_descriptor",
    "gradient_grid",
    "nn_match",
    "assign_topk",
]
