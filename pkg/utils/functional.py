"""
Differentiable operations on N×C×H×W tensors.

Each public function validates shapes, then dispatches to a `Function`
subclass whose backward rule is audited by `tools/gradient_auditor.py`.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Function, Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass
class ConvParams:
    """Weights and geometry of one 2-D convolution."""

    weight: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be 4-D, got shape {self.weight.shape}")
        if self.stride < 1 or self.padding < 0 or self.groups < 1:
            raise ShapeError(
                f"invalid conv geometry: stride={self.stride} padding={self.padding} groups={self.groups}"
            )
        c_out = self.weight.shape[0]
        if c_out % self.groups:
            raise ShapeError(f"{c_out} output channels not divisible by {self.groups} groups")
        if self.bias is not None and self.bias.shape != (c_out,):
            raise ShapeError(f"conv bias shape {self.bias.shape} does not match {c_out} outputs")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _check_nchw(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects an N×C×H×W tensor, got shape {x.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, groups: int) -> Tuple[np.ndarray, int, int]:
    """Contiguous columns of shape groups × (N·H'·W') × (C_g·k_h·k_w)."""
    n, c = xp.shape[:2]
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    cols = windows.reshape(n, groups, c // groups, ho, wo, kh, kw).transpose(1, 0, 3, 4, 2, 5, 6)
    return cols.reshape(groups, n * ho * wo, (c // groups) * kh * kw), ho, wo


def _col2im(grad_cols: np.ndarray, xp_shape: Tuple[int, ...], kh: int, kw: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    """Scatter-add column gradients back onto the padded input, one strided view per kernel tap."""
    n, c = xp_shape[:2]
    groups = grad_cols.shape[0]
    taps = grad_cols.reshape(groups, n, ho, wo, c // groups, kh, kw).transpose(5, 6, 1, 0, 4, 2, 3)
    taps = taps.reshape(kh, kw, n, c, ho, wo)
    grad_xp = np.zeros(xp_shape, dtype=grad_cols.dtype)
    for i in range(kh):
        for j in range(kw):
            grad_xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += taps[i, j]
    return grad_xp


class Convolution(Function):
    """Grouped 2-D cross-correlation as one batched GEMM over im2col columns."""

    def forward(self, x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None,
                stride: int = 1, padding: int = 0, groups: int = 1) -> np.ndarray:
        n = x.shape[0]
        c_out, _, kh, kw = w.shape
        p = padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols, ho, wo = _im2col(xp, kh, kw, stride, groups)
        wmat = w.reshape(groups, c_out // groups, -1)

        out = np.matmul(cols, wmat.transpose(0, 2, 1))
        out = out.reshape(groups, n, ho, wo, c_out // groups).transpose(1, 0, 4, 2, 3).reshape(n, c_out, ho, wo)
        if b is not None:
            out += b.reshape(1, -1, 1, 1)

        self.cols, self.wmat = cols, wmat
        self.geometry = (x.shape, xp.shape, w.shape, stride, padding, groups, ho, wo, b is not None)
        return out

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        x_shape, xp_shape, w_shape, stride, p, groups, ho, wo, has_bias = self.geometry
        n, c_out = grad.shape[:2]
        kh, kw = w_shape[2], w_shape[3]
        gmat = grad.reshape(n, groups, c_out // groups, ho, wo).transpose(1, 0, 3, 4, 2)
        gmat = gmat.reshape(groups, n * ho * wo, c_out // groups)

        grad_w = np.matmul(gmat.transpose(0, 2, 1), self.cols).reshape(w_shape)
        grad_xp = _col2im(np.matmul(gmat, self.wmat), xp_shape, kh, kw, stride, ho, wo)
        grad_x = grad_xp[:, :, p:p + x_shape[2], p:p + x_shape[3]]

        if has_bias:
            return grad_x, grad_w, grad.sum(axis=(0, 2, 3))
        return grad_x, grad_w


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """
    Grouped 2-D convolution (cross-correlation) with zero padding.

    Args:
        x (Tensor): Input of shape N×C_in×H×W
        params (ConvParams): Weights and geometry

    Returns:
        Tensor: Output of shape N×C_out×H'×W', H' = (H + 2·pad − k_h)/stride + 1

    Raises:
        ShapeError: If the input channels do not match the weights, or the
            output would be empty
    """
    _check_nchw(x, "conv2d")
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"conv2d expects {params.in_channels} input channels, got {x.shape[1]}"
        )
    kh, kw = params.weight.shape[2:]
    if min(conv_output_size(x.shape[2], kh, params.stride, params.padding),
           conv_output_size(x.shape[3], kw, params.stride, params.padding)) < 1:
        raise ShapeError(f"conv2d kernel {kh}×{kw} does not fit input {x.shape[2]}×{x.shape[3]}")

    tensors = (x, params.weight) if params.bias is None else (x, params.weight, params.bias)
    return Convolution.apply(*tensors, stride=params.stride, padding=params.padding, groups=params.groups)


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None,
                     stride: int = 1, padding: int = 0, groups: int = 1) -> np.ndarray:
    """Direct nested-loop convolution, used as an oracle for `conv2d`."""
    n, c, h, w = x.shape
    c_out, c_group, kh, kw = weight.shape
    out_per_group = c_out // groups
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    out = np.zeros((n, c_out, ho, wo), dtype=x.dtype)
    for b in range(n):
        for o in range(c_out):
            g = o // out_per_group
            for i in range(ho):
                for j in range(wo):
                    total = 0.0
                    for ci in range(c_group):
                        for di in range(kh):
                            for dj in range(kw):
                                total += (xp[b, g * c_group + ci, i * stride + di, j * stride + dj]
                                          * weight[o, ci, di, dj])
                    out[b, o, i, j] = total + (bias[o] if bias is not None else 0.0)
    return out


class MaxPool(Function):
    """2×2 stride-2 max pooling; ties go to the first element in row-major order."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        self.argmax = windows.argmax(axis=-1)
        self.in_shape = x.shape
        return np.take_along_axis(windows, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n, c, h, w = self.in_shape
        routed = np.zeros(grad.shape + (4,), dtype=grad.dtype)
        np.put_along_axis(routed, self.argmax[..., None], grad[..., None], axis=-1)
        routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (routed.reshape(n, c, h, w),)


def maxpool2d(x: Tensor) -> Tensor:
    """
    Max over non-overlapping 2×2 windows.

    Raises:
        ShapeError: If H or W is odd
    """
    _check_nchw(x, "maxpool2d")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {x.shape[2]}×{x.shape[3]}")
    return MaxPool.apply(x)


def maxpool2d_reference(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[b, ch, i, j] = x[b, ch, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    return out


def upsample_matrix(size: int, dtype=np.float64) -> np.ndarray:
    """
    Interpolation matrix of shape (2·size, size), half-pixel centres.

    Output index o samples source coordinate (o + 0.5)/2 − 0.5, clamped to
    [0, size − 1] at the borders.
    """
    matrix = np.zeros((2 * size, size), dtype=dtype)
    for o in range(2 * size):
        src = max((o + 0.5) / 2.0 - 0.5, 0.0)
        lo = min(int(np.floor(src)), size - 1)
        hi = min(lo + 1, size - 1)
        frac = src - lo
        matrix[o, lo] += 1.0 - frac
        matrix[o, hi] += frac
    return matrix


class BilinearUpsample(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.uh = upsample_matrix(x.shape[2], x.dtype)
        self.uw = upsample_matrix(x.shape[3], x.dtype)
        return np.einsum('oh,nchw,pw->ncop', self.uh, x, self.uw, optimize=True)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (np.einsum('oh,ncop,pw->nchw', self.uh, grad, self.uw, optimize=True),)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double H and W by bilinear interpolation (align-corners off)."""
    _check_nchw(x, "bilinear_upsample2x")
    return BilinearUpsample.apply(x)


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * self.mask,)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


class Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        # tanh form does not overflow for large |x|
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * self.out * (1.0 - self.out),)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


class SoftmaxChannels(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        e = np.exp(x - x.max(axis=1, keepdims=True))
        self.out = e / e.sum(axis=1, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (self.out * (grad - (grad * self.out).sum(axis=1, keepdims=True)),)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax across axis 1, so each pixel's channel values sum to 1."""
    if x.ndim < 2:
        raise ShapeError(f"softmax_channels needs a channel axis, got shape {x.shape}")
    return SoftmaxChannels.apply(x)


class LogSoftmaxChannels(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = x - x.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        self.softmax = np.exp(shifted - log_norm)
        return shifted - log_norm

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad - self.softmax * grad.sum(axis=1, keepdims=True),)


def log_softmax_channels(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"log_softmax_channels needs a channel axis, got shape {x.shape}")
    return LogSoftmaxChannels.apply(x)


class BatchNorm(Function):
    """
    Per-channel batch normalization.

    In training mode the running buffers are updated in place with the
    batch mean and the unbiased batch variance.
    """

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                running_mean: Optional[np.ndarray] = None, running_var: Optional[np.ndarray] = None,
                training: bool = True, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> np.ndarray:
        axes = (0, 2, 3)
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if running_mean is not None and running_var is not None:
                unbiased = var * count / (count - 1) if count > 1 else var
                running_mean *= 1.0 - momentum
                running_mean += momentum * mean
                running_var *= 1.0 - momentum
                running_var += momentum * unbiased
        else:
            mean, var = running_mean, running_var

        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        self.xhat, self.gamma, self.inv_std = xhat, gamma, inv_std
        self.training, self.count = training, count
        return xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        axes = (0, 2, 3)
        grad_gamma = (grad * self.xhat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_xhat = grad * self.gamma.reshape(1, -1, 1, 1)
        inv_std = self.inv_std.reshape(1, -1, 1, 1)
        if not self.training:
            return grad_xhat * inv_std, grad_gamma, grad_beta

        m = self.count
        grad_x = inv_std / m * (
            m * grad_xhat
            - grad_xhat.sum(axis=axes, keepdims=True)
            - self.xhat * (grad_xhat * self.xhat).sum(axis=axes, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool = True, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """
    Batch normalization over N, H and W for each channel.

    Args:
        x (Tensor): Input N×C×H×W
        gamma (Tensor): Scale, length C
        beta (Tensor): Shift, length C
        running_mean (np.ndarray): Running mean buffer, updated in training mode
        running_var (np.ndarray): Running variance buffer, updated in training mode
        training (bool): Batch statistics if True, running statistics otherwise

    Raises:
        ShapeError: If gamma, beta or the buffers do not have length C
    """
    _check_nchw(x, "batchnorm2d")
    c = x.shape[1]
    for name, shape in (("gamma", gamma.shape), ("beta", beta.shape),
                        ("running_mean", running_mean.shape), ("running_var", running_var.shape)):
        if shape != (c,):
            raise ShapeError(f"batchnorm2d {name} has shape {shape}, expected ({c},)")
    return BatchNorm.apply(x, gamma, beta, running_mean=running_mean, running_var=running_var,
                           training=training, momentum=momentum, eps=eps)


class GlobalAvgPool(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.in_shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        h, w = self.in_shape[2], self.in_shape[3]
        return (np.broadcast_to(grad / (h * w), self.in_shape).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    """N×C×H×W to N×C×1×1 spatial means."""
    _check_nchw(x, "global_avg_pool")
    return GlobalAvgPool.apply(x)


class ChannelConv1d(Function):
    """Same-length cross-correlation along the channel axis of an N×C matrix."""

    def forward(self, v: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        pad = (kernel.shape[0] - 1) // 2
        vp = np.pad(v, ((0, 0), (pad, pad)))
        self.windows = sliding_window_view(vp, kernel.shape[0], axis=1)
        self.kernel, self.pad, self.vp_shape = kernel, pad, vp.shape
        return self.windows @ kernel

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        k = self.kernel.shape[0]
        c = grad.shape[1]
        grad_kernel = np.einsum('nc,nck->k', grad, self.windows)
        grad_vp = np.zeros(self.vp_shape, dtype=grad.dtype)
        for j in range(k):
            grad_vp[:, j:j + c] += grad * self.kernel[j]
        return grad_vp[:, self.pad:self.pad + c], grad_kernel


def conv1d_channels(v: Tensor, kernel: Tensor) -> Tensor:
    """
    Zero-padded 1-D convolution across channels with one shared odd kernel.

    Raises:
        ShapeError: If v is not N×C or the kernel length is even
    """
    if v.ndim != 2:
        raise ShapeError(f"conv1d_channels expects an N×C tensor, got shape {v.shape}")
    if kernel.ndim != 1 or kernel.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d_channels needs an odd 1-D kernel, got shape {kernel.shape}")
    return ChannelConv1d.apply(v, kernel)


def conv1d_channels_reference(v: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    n, c = v.shape
    pad = (len(kernel) - 1) // 2
    out = np.zeros_like(v)
    for b in range(n):
        for i in range(c):
            for j, weight in enumerate(kernel):
                src = i + j - pad
                if 0 <= src < c:
                    out[b, i] += weight * v[b, src]
    return out


class ConcatChannels(Function):
    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        self.splits = np.cumsum([a.shape[1] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=1)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(np.split(grad, self.splits, axis=1))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two N×C×H×W tensors along channels, `a` first."""
    _check_nchw(a, "concat_channels")
    _check_nchw(b, "concat_channels")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"concat_channels cannot join {a.shape} and {b.shape}")
    return ConcatChannels.apply(a, b)


class AddWeighted(Function):
    def forward(self, a: np.ndarray, b: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        self.a, self.b, self.alpha, self.beta = a, b, alpha, beta
        return alpha.reshape(()) * a + beta.reshape(()) * b

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_alpha = np.asarray((grad * self.a).sum()).reshape(self.alpha.shape)
        grad_beta = np.asarray((grad * self.b).sum()).reshape(self.beta.shape)
        return grad * self.alpha.reshape(()), grad * self.beta.reshape(()), grad_alpha, grad_beta


def add_weighted(a: Tensor, b: Tensor, alpha: Tensor, beta: Tensor) -> Tensor:
    """alpha·a + beta·b with learnable scalar weights."""
    if a.shape != b.shape:
        raise ShapeError(f"add_weighted needs equal shapes, got {a.shape} and {b.shape}")
    if alpha.size != 1 or beta.size != 1:
        raise ShapeError("add_weighted weights must be scalars")
    return AddWeighted.apply(a, b, alpha, beta)


class MulChannelwise(Function):
    def forward(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        self.x, self.s = x, s
        return x * s

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return grad * self.s, (grad * self.x).sum(axis=(2, 3), keepdims=True)


def mul_channelwise(x: Tensor, s: Tensor) -> Tensor:
    """Scale every channel of x by the matching entry of s (N×C×1×1)."""
    _check_nchw(x, "mul_channelwise")
    if s.shape != (x.shape[0], x.shape[1], 1, 1):
        raise ShapeError(f"mul_channelwise scale has shape {s.shape}, expected "
                         f"{(x.shape[0], x.shape[1], 1, 1)}")
    return MulChannelwise.apply(x, s)


class Affine(Function):
    def forward(self, v: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
        self.v, self.w, self.has_bias = v, w, b is not None
        out = v @ w.T
        return out + b if b is not None else out

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grads = (grad @ self.w, grad.T @ self.v)
        return grads + (grad.sum(axis=0),) if self.has_bias else grads


def linear(v: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """v @ weightᵀ + bias for v of shape N×F_in and weight F_out×F_in."""
    if v.ndim != 2 or weight.ndim != 2 or v.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear cannot map {v.shape} with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    return Affine.apply(v, weight) if bias is None else Affine.apply(v, weight, bias)
