"""Forward and backward implementations of every layer the networks need.

All functions take and return :class:`~lenslearn.tensor.Tensor`; math is
dtype-generic (float32 by default, float64 when the inputs are float64).
Convolution runs as im2col + GEMM; its independent 6-loop oracle lives in
the test suite, not here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeError


# ---------------------------------------------------------------------------
# convolution

@dataclass
class ConvParams:
    """3x3-style convolution parameters: kernel (O, I, kh, kw), bias (O,)."""

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be 4-d (O,I,kh,kw), got shape {self.kernel.shape}")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.kernel.shape[0]:
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match kernel out-channels "
                f"{self.kernel.shape[0]}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")

    def out_hw(self, h: int, w: int) -> tuple:
        kh, kw = self.kernel.shape[2], self.kernel.shape[3]
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        return oh, ow


def _check_conv_input(x: Tensor, p: ConvParams) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be 4-d (N,C,H,W), got shape {x.shape}")
    o, i, kh, kw = p.kernel.shape
    n, c, h, w = x.shape
    if c != i:
        raise ShapeError(
            f"conv input has {c} channels (input shape {x.shape}) but kernel expects "
            f"{i} (kernel shape {p.kernel.shape})"
        )
    if h + 2 * p.padding < kh or w + 2 * p.padding < kw:
        raise ShapeError(
            f"spatial dims of input shape {x.shape} are smaller than kernel "
            f"shape {p.kernel.shape} even after padding {p.padding}"
        )


def _pad_input(xd: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return xd
    return np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N*oh*ow, C*kh*kw), window rows in row-major order."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]            # (N, C, oh, ow, kh, kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5)             # (N, oh, ow, C, kh, kw)
    return np.ascontiguousarray(cols).reshape(-1, xp.shape[1] * kh * kw)


def conv2d_forward(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlation of x with p.kernel plus bias.

    Output spatial size is floor((H + 2*padding - kh) / stride) + 1.
    """
    _check_conv_input(x, p)
    o, i, kh, kw = p.kernel.shape
    n, c, h, w = x.shape
    oh, ow = p.out_hw(h, w)
    xp = _pad_input(x.data, p.padding)
    cols = _im2col(xp, kh, kw, p.stride, oh, ow)
    kmat = p.kernel.data.reshape(o, i * kh * kw)
    out = cols @ kmat.T
    out += p.bias.data
    return Tensor(out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))


def conv2d_backward(x: Tensor, p: ConvParams, grad_out: Tensor):
    """Gradients of sum(grad_out * conv2d_forward(x, p)) w.r.t. x, kernel, bias."""
    _check_conv_input(x, p)
    o, i, kh, kw = p.kernel.shape
    n, c, h, w = x.shape
    oh, ow = p.out_hw(h, w)
    if grad_out.shape != (n, o, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match conv output shape {(n, o, oh, ow)}"
        )
    god = grad_out.data
    gmat = god.transpose(0, 2, 3, 1).reshape(-1, o)        # (N*oh*ow, O)

    xp = _pad_input(x.data, p.padding)
    cols = _im2col(xp, kh, kw, p.stride, oh, ow)

    grad_bias = god.sum(axis=(0, 2, 3))
    grad_kernel = (gmat.T @ cols).reshape(o, i, kh, kw)

    kmat = p.kernel.data.reshape(o, i * kh * kw)
    dcols = (gmat @ kmat).reshape(n, oh, ow, i, kh, kw)
    gxp = np.zeros_like(xp)
    s = p.stride
    for a in range(kh):
        for b in range(kw):
            gxp[:, :, a:a + s * oh:s, b:b + s * ow:s] += dcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    pd = p.padding
    grad_input = gxp[:, :, pd:pd + h, pd:pd + w] if pd else gxp
    return Tensor(np.ascontiguousarray(grad_input)), Tensor(grad_kernel), Tensor(grad_bias)


# ---------------------------------------------------------------------------
# 2x2 max pooling

def maxpool2x2(x: Tensor):
    """Halve H and W by taking per-window maxima.

    Returns (output, argmax) where argmax holds each window's winning index
    in row-major window order (ties broken by the first index), consumed by
    :func:`maxpool2x2_backward`.
    """
    if x.ndim != 4:
        raise ShapeError(f"pool input must be 4-d (N,C,H,W), got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even H and W, got shape {x.shape}; pad first")
    win = (
        x.data.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    argmax = win.argmax(axis=-1)
    out = np.take_along_axis(win, argmax[..., None], axis=-1)[..., 0]
    return Tensor(np.ascontiguousarray(out)), argmax


def maxpool2x2_backward(argmax: np.ndarray, grad_out: Tensor) -> Tensor:
    """Route grad_out to the recorded argmax of each 2x2 window."""
    n, c, oh, ow = grad_out.shape
    if argmax.shape != (n, c, oh, ow):
        raise ShapeError(
            f"argmax shape {argmax.shape} does not match grad_out shape {grad_out.shape}"
        )
    gwin = np.zeros((n, c, oh, ow, 4), dtype=grad_out.data.dtype)
    np.put_along_axis(gwin, argmax[..., None], grad_out.data[..., None], axis=-1)
    gx = gwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
    return Tensor(np.ascontiguousarray(gx))


# ---------------------------------------------------------------------------
# nearest-neighbor 2x upsampling

def upsample2x_nearest(x: Tensor) -> Tensor:
    """Replicate every pixel into a 2x2 block (doubles H and W)."""
    if x.ndim != 4:
        raise ShapeError(f"upsample input must be 4-d (N,C,H,W), got shape {x.shape}")
    return Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))


def upsample2x_backward(grad_out: Tensor) -> Tensor:
    """Exact adjoint of replication: sum each 2x2 block of grad_out."""
    n, c, h2, w2 = grad_out.shape
    if h2 % 2 or w2 % 2:
        raise ShapeError(f"grad_out of upsample2x must have even dims, got {grad_out.shape}")
    g = grad_out.data.reshape(n, c, h2 // 2, 2, w2 // 2, 2)
    return Tensor(np.ascontiguousarray(g.sum(axis=(3, 5))))


# ---------------------------------------------------------------------------
# batch normalization

@dataclass
class BatchNormState:
    """Per-channel affine + running statistics for batch normalization."""

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    epsilon: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"

    @classmethod
    def for_channels(cls, channels: int, dtype=np.float32, **kw) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype)),
            beta=Tensor(np.zeros(channels, dtype=dtype)),
            running_mean=Tensor(np.zeros(channels, dtype=dtype)),
            running_var=Tensor(np.ones(channels, dtype=dtype)),
            **kw,
        )


def _bn_check(x: Tensor, s: BatchNormState) -> None:
    if x.ndim != 4:
        raise ShapeError(f"batchnorm input must be 4-d (N,C,H,W), got shape {x.shape}")
    if x.shape[1] != s.gamma.shape[0]:
        raise ShapeError(
            f"batchnorm input has {x.shape[1]} channels but state holds {s.gamma.shape[0]}"
        )


def _bn_batch_stats(xd: np.ndarray):
    # biased variance (divide by M), used both for normalization and the
    # running-stat update so train and eval agree in the large-batch limit
    mean = xd.mean(axis=(0, 2, 3))
    var = xd.var(axis=(0, 2, 3))
    return mean, var


def batchnorm_forward(x: Tensor, s: BatchNormState, update_running: bool = True) -> Tensor:
    """Normalize per channel; train mode uses batch stats, eval mode running stats.

    In train mode the running statistics are blended with momentum unless
    ``update_running`` is False (gradient-check closures must not mutate state).
    """
    _bn_check(x, s)
    n, c, h, w = x.shape
    if s.mode == "train":
        if n * h * w < 2:
            raise ShapeError(
                f"batchnorm train mode needs >= 2 values per channel, got input shape {x.shape}"
            )
        mean, var = _bn_batch_stats(x.data)
        if update_running:
            m = s.momentum
            s.running_mean.data[:] = (1.0 - m) * s.running_mean.data + m * mean
            s.running_var.data[:] = (1.0 - m) * s.running_var.data + m * var
    elif s.mode == "eval":
        mean, var = s.running_mean.data, s.running_var.data
    else:
        raise ValueError(f"unknown batchnorm mode {s.mode!r}")
    inv_std = 1.0 / np.sqrt(var + s.epsilon)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = s.gamma.data[None, :, None, None] * xhat + s.beta.data[None, :, None, None]
    return Tensor(out)


def batchnorm_backward(x: Tensor, s: BatchNormState, grad_out: Tensor):
    """Gradients w.r.t. input, gamma, beta (standard chain rule).

    Recomputes the batch statistics from x, so it must see the same input
    the forward pass saw.
    """
    _bn_check(x, s)
    if grad_out.shape != x.shape:
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match input shape {x.shape}"
        )
    n, c, h, w = x.shape
    god = grad_out.data
    if s.mode == "train":
        mean, var = _bn_batch_stats(x.data)
    else:
        mean, var = s.running_mean.data, s.running_var.data
    inv_std = 1.0 / np.sqrt(var + s.epsilon)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]

    dgamma = (god * xhat).sum(axis=(0, 2, 3))
    dbeta = god.sum(axis=(0, 2, 3))
    dxhat = god * s.gamma.data[None, :, None, None]
    if s.mode == "train":
        m = n * h * w
        dx = (
            dxhat
            - dxhat.mean(axis=(0, 2, 3))[None, :, None, None]
            - xhat * (dxhat * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
        ) * inv_std[None, :, None, None]
    else:
        dx = dxhat * inv_std[None, :, None, None]
    return Tensor(dx), Tensor(dgamma), Tensor(dbeta)


# ---------------------------------------------------------------------------
# elementwise activations

def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, 0.0))


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    """Pass gradient where x > 0; the subgradient at exactly 0 is 0."""
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    return Tensor(grad_out.data * (x.data > 0))


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; no clamping here (the loss clamps)."""
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return Tensor(out)


def sigmoid_backward(y: Tensor, grad_out: Tensor) -> Tensor:
    """Gradient through sigmoid given its forward output y: y * (1 - y)."""
    if grad_out.shape != y.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {y.shape}")
    return Tensor(grad_out.data * y.data * (1.0 - y.data))


# ---------------------------------------------------------------------------
# channel concat / split (skip connections)

def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat needs 4-d tensors, got shapes {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"concat inputs must agree on batch and spatial dims, got {a.shape} and {b.shape}"
        )
    return Tensor(np.concatenate([a.data, b.data], axis=1))


def split_channels(grad: Tensor, channels_a: int):
    """Adjoint of concat_channels: slice the gradient back apart."""
    if not 0 <= channels_a <= grad.shape[1]:
        raise ShapeError(f"cannot split {channels_a} channels out of {grad.shape[1]}")
    ga = grad.data[:, :channels_a]
    gb = grad.data[:, channels_a:]
    return Tensor(np.ascontiguousarray(ga)), Tensor(np.ascontiguousarray(gb))


# ---------------------------------------------------------------------------
# zero padding to even spatial dims (pool feeder for odd geometries)

def pad_to_even(x: Tensor) -> Tensor:
    """Zero-pad bottom/right so H and W are even (no-op when already even)."""
    if x.ndim != 4:
        raise ShapeError(f"pad input must be 4-d (N,C,H,W), got shape {x.shape}")
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    if not (ph or pw):
        return Tensor(x.data.copy())
    return Tensor(np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw))))


def pad_to_even_backward(input_shape: tuple, grad_out: Tensor) -> Tensor:
    """Adjoint of pad_to_even: crop the gradient back to the input shape."""
    n, c, h, w = input_shape
    g = grad_out.data[:, :, :h, :w]
    return Tensor(np.ascontiguousarray(g))
