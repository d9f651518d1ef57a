"""Minimal float64 tensor engine with reverse-mode differentiation."""

from .gradcheck import GradCheckReport, finite_diff_check, relative_error
from .ops import (
    absolute,
    bilinear_sample,
    clamp,
    conv2d,
    einsum2,
    linear,
    log,
    matmul,
    power,
    relu,
    scatter_max,
    sigmoid,
    softmax,
    transpose,
    upsample_nearest,
)
from .params import ParameterSet, load_checkpoint, save_checkpoint
from .tensor import Tensor, add, as_tensor, concat, mul, no_grad, reshape, stack, take, total

__all__ = [
    "GradCheckReport",
    "ParameterSet",
    "Tensor",
    "absolute",
    "power",
    "add",
    "as_tensor",
    "bilinear_sample",
    "clamp",
    "concat",
    "conv2d",
    "einsum2",
    "finite_diff_check",
    "linear",
    "load_checkpoint",
    "log",
    "matmul",
    "mul",
    "no_grad",
    "relative_error",
    "relu",
    "reshape",
    "save_checkpoint",
    "scatter_max",
    "sigmoid",
    "softmax",
    "stack",
    "take",
    "total",
    "transpose",
    "upsample_nearest",
]
