"""Minimal reverse-mode differentiation over numpy arrays."""

import numpy as np

from .gradcheck import GradCheckReport, grad_check, relative_error
from .nn import conv2d, log_softmax, maxpool2d, smoothed_cross_entropy, softmax
from .ops import (add, broadcast_add, clip, concat, constant, getitem, matmul, mean, mul, pointwise,
                  relu, reshape, scale, sigmoid, stack, sub, sum, tanh, transpose)
from .tensor import ShapeError, Tensor, as_tensor, backward, no_grad, topological_order


def truncated_normal(rng, shape, std=0.1, dtype=np.float32):
    """Normal(0, std) redrawn outside two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def parameter(data, name=None, dtype=None):
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


__all__ = [
    "GradCheckReport", "ShapeError", "Tensor", "add", "as_tensor", "backward", "broadcast_add", "clip",
    "concat", "constant", "conv2d", "getitem", "grad_check", "log_softmax", "matmul", "maxpool2d", "mean",
    "mul", "no_grad", "parameter", "pointwise", "relative_error", "relu", "reshape", "scale", "sigmoid",
    "smoothed_cross_entropy", "softmax", "stack", "sub", "sum", "tanh", "topological_order", "transpose",
    "truncated_normal",
]
