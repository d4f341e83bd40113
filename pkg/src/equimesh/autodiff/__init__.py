"""Minimal reverse-mode autodiff over dense float arrays."""

from .gradcheck import directional_check, gradcheck
from .nn import cross_entropy, dropout, layer_norm, log_softmax, node_norm, silu, softmax
from .tensor import (
    Tensor,
    add,
    as_tensor,
    build_tape,
    concat,
    cross,
    div,
    exp,
    gather,
    getitem,
    log,
    make_op,
    matmul,
    mean,
    mul,
    norm,
    power,
    relu,
    reshape,
    segment_matrix,
    segment_mean,
    segment_sum,
    sigmoid,
    sqnorm,
    sqrt,
    sub,
    tanh,
    transpose,
    tsum,
    where,
)

__all__ = [
    "Tensor", "add", "as_tensor", "build_tape", "concat", "cross", "div", "exp", "gather",
    "getitem", "log", "make_op", "matmul", "mean", "mul", "norm", "power", "relu", "reshape",
    "segment_matrix", "segment_mean", "segment_sum", "sigmoid", "sqnorm", "sqrt", "sub", "tanh",
    "transpose", "tsum", "where", "cross_entropy", "dropout", "layer_norm", "log_softmax",
    "node_norm", "silu", "softmax", "gradcheck", "directional_check",
]
