"""Motion-compensation kernels and rate-distortion analytics.

Subpackages: ``tensor`` (dense array substrate and its container
format), ``attention`` (quadratic and linear-complexity cross-attention
with gradients), ``motion`` (flow warping, pyramids, block matching,
flow/image I/O), ``codec`` (conditional coding pipeline with ablation
modes), ``metrics`` (PSNR, MS-SSIM, RD loss, BD-rate, reports),
``bench`` (complexity benchmark harness), ``cli`` (command-line front
end). The hot kernels run on a compiled core when built, with a numpy
fallback selected at import; see ``mocomp.kernels.BACKEND``.
"""

from .kernels import BACKEND
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["BACKEND", "Tensor", "__version__"]
