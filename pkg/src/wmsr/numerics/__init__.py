"""Minimal NCHW tensor core with reverse-mode differentiation."""

from .gradcheck import directional_check, gradcheck, numerical_grad, relative_error
from .ops import (
    ShapeError,
    abs,
    add,
    chunk,
    concat,
    conv2d,
    depthwise_conv2d,
    exp,
    layer_norm,
    linear,
    mean,
    mul,
    pad2d,
    pixel_shuffle,
    pixel_unshuffle,
    reshape,
    sigmoid,
    silu,
    slice_channels,
    softplus,
    sub,
    sum,
)
from .resize import bicubic_matrix, bicubic_resize
from .tensor import Node, Tape, Tensor, active_tape, as_tensor, backward, make_op

__all__ = [
    "Node", "Tape", "Tensor", "ShapeError", "active_tape", "as_tensor", "backward", "make_op",
    "abs", "add", "chunk", "concat", "conv2d", "depthwise_conv2d", "exp", "layer_norm", "linear",
    "mean", "mul", "pad2d", "pixel_shuffle", "pixel_unshuffle", "reshape", "sigmoid", "silu",
    "slice_channels", "softplus", "sub", "sum", "bicubic_matrix", "bicubic_resize",
    "directional_check", "gradcheck", "numerical_grad", "relative_error",
]
