"""Autodiff package initialization"""

from src.autodiff.tensor import (
    Tensor,
    Node,
    ComputationTape,
    add,
    sub,
    mul,
    div,
    neg,
    power,
    matmul,
    tensor_sum,
    reshape,
    broadcast_to,
    backward,
    no_grad,
    is_grad_enabled,
    record_op,
    set_precision,
)
from src.autodiff.functional import (
    conv2d,
    relu,
    max_pool2d,
    mean_over_axes,
    batch_norm2d,
    linear,
    flatten,
)

__all__ = [
    "Tensor",
    "Node",
    "ComputationTape",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "matmul",
    "tensor_sum",
    "reshape",
    "broadcast_to",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "record_op",
    "set_precision",
    "conv2d",
    "relu",
    "max_pool2d",
    "mean_over_axes",
    "batch_norm2d",
    "linear",
    "flatten",
]
