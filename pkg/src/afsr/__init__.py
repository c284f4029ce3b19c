"""Audio super-resolution toolkit: attention-modulated 1-D U-Net, data
pipeline, training loop, and evaluation metrics, built on a small
numpy-backed autodiff engine."""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad  # noqa: F401
from .model import Model, ModelConfig, count_parameters  # noqa: F401
