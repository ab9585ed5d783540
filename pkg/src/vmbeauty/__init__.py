"""Dual-branch (attention + selective state-space) image score regressor on a numpy autodiff core."""

from .model import VARIANTS, ModelConfig, VMBeautyNet, forward, fuse, tiny_model_config
from .tensor import Tensor, no_grad, precision

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "Tensor",
    "VMBeautyNet",
    "forward",
    "fuse",
    "no_grad",
    "precision",
    "tiny_model_config",
]
__version__ = "0.1.0"
