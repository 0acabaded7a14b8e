"""
Convolutional network operations on Tensors.

conv2d and max_pool2d gather windows with ``sliding_window_view`` and
contract them with ``tensordot``; backward passes scatter by looping over
kernel offsets, which keeps the reduction order fixed.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autodiff.tensor import Tensor, add, broadcast_to, matmul, record_op
from src.utils.errors import ShapeError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    2-D cross-correlation (no kernel flip).

    Args:
        x: Input of shape [b, c_in, h, w]
        kernel: Weights of shape [c_out, c_in, kh, kw]
        bias: Optional [c_out] bias
        stride: Step between windows (>= 1)
        padding: Zero padding on each spatial side

    Returns:
        Tensor of shape [b, c_out, h', w']
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape}, {kernel.shape}")
    b, c_in, h, w = x.shape
    c_out, k_in, kh, kw = kernel.shape
    if k_in != c_in:
        raise ShapeError(f"conv2d: input has {c_in} channels, kernel expects {k_in}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )

    oh = _output_extent(h, kh, stride, padding)
    ow = _output_extent(w, kw, stride, padding)
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.data, pad) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)

    def _backward(g):
        dkernel = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        row_end = stride * (oh - 1) + 1
        col_end = stride * (ow - 1) + 1
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0]))
                dxp[:, :, i:i + row_end:stride, j:j + col_end:stride] += contrib.transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        dbias = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dkernel, dbias

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record_op("conv2d", out, inputs, _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def max_pool2d(x: Tensor, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    stride = stride or kernel
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects rank-4 input, got {x.shape}")
    b, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"max_pool2d: window {kernel} larger than input {h}x{w}")
    oh = _output_extent(h, kernel, stride, 0)
    ow = _output_extent(w, kernel, stride, 0)
    windows = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(b, c, oh, ow, kernel * kernel)
    winner = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    def _backward(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        row_end = stride * (oh - 1) + 1
        col_end = stride * (ow - 1) + 1
        for pos in range(kernel * kernel):
            i, j = divmod(pos, kernel)
            dx[:, :, i:i + row_end:stride, j:j + col_end:stride] += g * (winner == pos)
        return (dx,)

    return record_op("max_pool2d", np.ascontiguousarray(out), (x,), _backward)


def mean_over_axes(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(a % x.ndim for a in axes)
    count = int(np.prod([x.shape[a] for a in axes]))

    def _backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape) / count,)

    return record_op("mean", np.asarray(x.data.mean(axis=axes)), (x,), _backward)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """
    Per-channel batch normalization over (batch, height, width).

    Training mode normalizes with batch statistics and updates the running
    buffers in place (running variance uses the unbiased estimate). Eval
    mode normalizes with the running buffers.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects rank-4 input, got {x.shape}")
    b, c, h, w = x.shape
    scale = gamma.data.reshape(1, c, 1, 1)
    shift = beta.data.reshape(1, c, 1, 1)

    if training:
        if b < 2:
            raise ShapeError(f"batch_norm2d needs batch >= 2 in training mode, got {b}")
        n = b * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        n = None
        mean, var = running_mean, running_var

    inv_std = (1.0 / np.sqrt(var + eps)).reshape(1, c, 1, 1)
    x_hat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std
    out = scale * x_hat + shift

    def _backward(g):
        dgamma = (g * x_hat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dx_hat = g * scale
        if n is None:
            dx = dx_hat * inv_std
        else:
            dx = inv_std / n * (
                n * dx_hat
                - dx_hat.sum(axis=(0, 2, 3), keepdims=True)
                - x_hat * (dx_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
            )
        return dx, dgamma, dbeta

    return record_op("batch_norm2d", out, (x, gamma, beta), _backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x [b, in] @ weight [in, out] (+ bias [out])."""
    out = matmul(x, weight)
    if bias is None:
        return out
    return add(out, broadcast_to(bias, out.shape))


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def output_shape_conv(
    shape: Tuple[int, int, int], out_channels: int, kernel: int, stride: int, padding: int
) -> Tuple[int, int, int]:
    _, h, w = shape
    return (
        out_channels,
        _output_extent(h, kernel, stride, padding),
        _output_extent(w, kernel, stride, padding),
    )


def output_shape_pool(shape: Tuple[int, int, int], kernel: int, stride: int) -> Tuple[int, int, int]:
    c, h, w = shape
    return c, _output_extent(h, kernel, stride, 0), _output_extent(w, kernel, stride, 0)
