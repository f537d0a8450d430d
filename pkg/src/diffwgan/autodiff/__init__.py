"""Dense float64 tensors with reverse-mode differentiation (including double backprop)."""

from . import ops
from .engine import backward, grad, grad_of_grad
from .ops import (
    OPS,
    abs,
    add,
    broadcast_to,
    clamp_min,
    concat,
    conv1d,
    conv2d,
    div,
    embed,
    exp,
    getitem,
    l2_norm,
    layer_norm,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    neg,
    pad,
    pow_scalar,
    relu,
    reshape,
    sigmoid,
    silu,
    softmax,
    sqrt,
    square,
    stack,
    sub,
    sum,
    sum_to,
    swapaxes,
    tanh,
    transpose,
)
from .tensor import (
    AutodiffError,
    DoubleBackpropError,
    Function,
    GraphFreedError,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    enable_grad,
    is_grad_enabled,
    no_grad,
    set_grad_enabled,
)
