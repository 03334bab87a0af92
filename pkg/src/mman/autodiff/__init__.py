"""Dense float64 tensors with tape-based reverse-mode differentiation."""
from . import kernels
from .gradcheck import GradCheckReport, check_gradients, grad_check
from .ops import (
    add, concat, conv1d, conv2d, div, dropout, embedding, flatten, gelu, index, layer_norm,
    linear, masked_mean, matmul, maxpool1d, mean, mul, norm_lastdim, relu, reshape,
    sigmoid, softmax_lastdim, sqrt, square, sub, sum, tanh, transpose,
)
from .tensor import Tape, Tensor, active_tape, as_tensor, backward, clear_adjoint_faults, set_adjoint_fault

__all__ = [
    "Tensor", "Tape", "backward", "active_tape", "as_tensor", "kernels",
    "grad_check", "check_gradients", "GradCheckReport",
    "set_adjoint_fault", "clear_adjoint_faults",
    "add", "sub", "mul", "div", "matmul", "linear", "softmax_lastdim", "sigmoid", "tanh",
    "relu", "gelu", "sqrt", "square", "sum", "mean", "masked_mean", "norm_lastdim",
    "reshape", "flatten", "transpose", "concat", "index", "layer_norm", "embedding", "dropout",
    "conv1d", "conv2d", "maxpool1d",
]
