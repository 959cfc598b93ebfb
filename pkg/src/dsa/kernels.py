"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``DSA_FORCE_PYTHON=1`` to use the
numpy fallback even when the extension is built.
"""
import os

if os.environ.get("DSA_FORCE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl
        BACKEND = "python"

segment_dp = _impl.segment_dp
nurbs_eval_grid = _impl.nurbs_eval_grid
nurbs_backward_grid = _impl.nurbs_backward_grid
label_components = _impl.label_components

__all__ = [
    "BACKEND",
    "segment_dp",
    "nurbs_eval_grid",
    "nurbs_backward_grid",
    "label_components",
]
