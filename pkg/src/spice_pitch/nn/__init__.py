"""Minimal tensor library with reverse-mode autodiff, 1-D conv layers and Adam."""

from .functional import batchnorm1d, conv1d, conv_transpose1d, dense, flatten, maxpool1d
from .layers import LayerSpec, NetworkSpec, Parameter, Sequential
from .optim import Adam
from .tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    absolute,
    clamp,
    concat,
    mean,
    relu,
    sigmoid,
    split,
    square,
    stop_gradient,
    total,
)

__all__ = [
    "Adam", "GraphError", "LayerSpec", "NetworkSpec", "NonFiniteError", "Parameter", "Sequential",
    "Tensor", "absolute", "batchnorm1d", "clamp", "concat", "conv1d", "conv_transpose1d", "dense",
    "flatten", "maxpool1d", "mean", "relu", "sigmoid", "split", "square", "stop_gradient", "total",
]
