"""Minimal tensor engine with reverse-mode automatic differentiation."""

from .tensor import (
    DEFAULT_DTYPE,
    Parameter,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    active_tape,
    add,
    backward,
    clip,
    concat,
    debug_checks_enabled,
    exp,
    leaky_relu,
    mean_over,
    mul,
    no_grad,
    primitive_forward,
    reshape,
    scalar_mul,
    set_debug_checks,
    shift,
    slice_op,
    softplus,
    sub,
    sum_over,
    transpose,
)
from .conv import conv2d, conv3d, pointwise_linear
from .sample import bilinear_grid_sample, neighbor_aggregate
from .gradcheck import analytic_gradient, grad_check, numeric_gradient
from .tns import TnsFormatError, load_tns, save_tns

__all__ = [
    "DEFAULT_DTYPE", "Parameter", "ShapeError", "Tape", "TapeError", "Tensor",
    "active_tape", "add", "backward", "clip", "concat", "debug_checks_enabled",
    "exp", "leaky_relu", "mean_over", "mul", "no_grad", "primitive_forward",
    "reshape", "scalar_mul", "set_debug_checks", "shift", "slice_op",
    "softplus", "sub", "sum_over", "transpose",
    "conv2d", "conv3d", "pointwise_linear",
    "bilinear_grid_sample", "neighbor_aggregate",
    "analytic_gradient", "grad_check", "numeric_gradient",
    "TnsFormatError", "load_tns", "save_tns",
]
