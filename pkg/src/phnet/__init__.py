"""Parameterized hypercomplex convolutional networks with attention-map
conditioning: tensor autograd core, quaternion/PHC layers, PHResNet models,
data pipeline, training, and metrics."""

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad"]
__version__ = "0.1.0"
