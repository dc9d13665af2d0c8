"""Context-aware attentional pooling on a from-scratch autodiff core.

The package is a library first: `tensor` provides float64 tensors with a
reverse-mode tape, and the architecture blocks (backbone, pixel_attention,
regions + bilinear pooling, cap_attention, lstm, vlad) compose into the
four ablation modes assembled by `model`. `training` holds the SGD loop,
`verify` the built-in gradient/oracle/invariant checks, and `cli` a small
command-line front end.
"""

from .tensor import Tape, Tensor

__version__ = "0.1.0"
__all__ = ["Tape", "Tensor", "__version__"]
