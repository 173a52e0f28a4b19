"""histoscan: hierarchical selective-scan vision backbone.

A numpy-backed autodiff engine, a compiled (or fallback) selective-scan
kernel, two-branch scan/conv mixer blocks over a four-stage encoder,
masked-token pretraining, and a multi-task slide-level aggregation head.
"""

from .tensor import Tensor, no_grad, oracle_mode, use_dtype
from .gradcheck import finite_diff_check
from .kernels import backend as kernel_backend

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "oracle_mode",
    "use_dtype",
    "finite_diff_check",
    "kernel_backend",
    "__version__",
]
