"""Bayesian hierarchical SVD-model: model, sampler and convergence checks.

The cell-block kernel is compiled when the extension is available; setting
``SAEMORT_PURE_PYTHON=1`` forces the numpy implementation.
"""

import os

from . import _kernels_py

if os.environ.get("SAEMORT_PURE_PYTHON"):
    _backend = _kernels_py
    KERNEL_BACKEND = "python"
else:
    try:
        from . import _kernels as _backend

        KERNEL_BACKEND = "compiled"
    except ImportError:
        _backend = _kernels_py
        KERNEL_BACKEND = "python"

update_cells = _backend.update_cells

__all__ = ["KERNEL_BACKEND", "update_cells"]
