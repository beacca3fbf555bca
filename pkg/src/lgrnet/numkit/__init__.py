"""Dense float64 tensor kernels, seeded RNG and reverse-mode gradients."""

from . import io, ops
from .gradcheck import FD_STEP, GradcheckReport, gradcheck, numerical_grad, rel_error
from .ops import (
    add, clip, concat, conv1d_depthwise, div, exp, getitem, group_norm, index_add, layer_norm,
    log, log_softmax, matmul, mean, mul, neg, relu, reshape, scale, sigmoid, silu, softmax,
    softplus, stack, sub, take, transpose,
)
from .rng import Rng
from .tensor import NonFiniteError, Tape, Tensor, active_tape, grad, value_and_grad

__all__ = [
    "FD_STEP", "GradcheckReport", "NonFiniteError", "Rng", "Tape", "Tensor", "active_tape",
    "add", "clip", "concat", "conv1d_depthwise", "div", "exp", "getitem", "grad", "gradcheck",
    "group_norm", "index_add", "io", "layer_norm", "log", "log_softmax", "matmul", "mean", "mul",
    "neg", "numerical_grad", "ops", "rel_error", "relu", "reshape", "scale", "sigmoid", "silu",
    "softmax", "softplus", "stack", "sub", "take", "transpose", "value_and_grad",
]
