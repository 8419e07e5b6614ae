"""Tensor arithmetic, FFTs, and reverse-mode differentiation."""

from .optim import AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    concat,
    constant,
    div,
    fft2,
    gather_rows,
    gelu,
    ifft2,
    matmul,
    mul,
    parameter,
    reshape,
    scatter_rows,
    sparse_matmul,
    spectral_channel_mix,
    square,
    stop_gradient,
    sub,
    tanh,
    tensor_mean,
    tensor_sum,
    transpose,
)

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "concat",
    "constant",
    "div",
    "fft2",
    "gather_rows",
    "gelu",
    "ifft2",
    "matmul",
    "mul",
    "parameter",
    "reshape",
    "scatter_rows",
    "sparse_matmul",
    "spectral_channel_mix",
    "square",
    "stop_gradient",
    "sub",
    "tanh",
    "tensor_mean",
    "tensor_sum",
    "transpose",
]
