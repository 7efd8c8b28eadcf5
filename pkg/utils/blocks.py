"""
Encoder and decoder building blocks: convolution blocks, the pooling
DownBlock, channel attention (ECA and CCA) and the upsampling UpBlock.
"""
import math
from typing import Optional

import numpy as np

from . import functional as F
from .cost import CostCounter, Shape, numel
from .errors import ShapeError
from .layers import BatchNorm2d, Conv2d, Linear, Module, Parameter, he_uniform
from .tensor import Tensor


def eca_kernel_size(channels: int) -> int:
    """Odd 1-D kernel size adapted to the channel count, never below 3."""
    t = int(abs((math.log2(channels) + 1) / 2))
    k = t if t % 2 else t + 1
    return max(k, 3)


class ConvBnRelu(Module):
    """3×3 convolution, batch norm, relu. The conv has no bias; batch norm's shift replaces it."""

    def __init__(self, in_channels: int, out_channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, padding=1, bias=False, rng=rng)
        self.norm = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.norm(self.conv(x)))

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        shape = self.norm.profile(counter, self.conv.profile(counter, shape))
        counter.elementwise(numel(shape), CostCounter.RELU)
        return shape


class ConvBlock(Module):
    """
    Two ConvBnRelu stages; spatial size is preserved.

    The first stage maps to `mid_channels` (default: `out_channels`).
    """

    def __init__(self, in_channels: int, out_channels: int, mid_channels: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        mid_channels = out_channels if mid_channels is None else mid_channels
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.first = ConvBnRelu(in_channels, mid_channels, rng)
        self.second = ConvBnRelu(mid_channels, out_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"ConvBlock expects {self.in_channels} channels, got shape {x.shape}")
        return self.second(self.first(x))

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        return self.second.profile(counter, self.first.profile(counter, shape))


class DownBlock(Module):
    """Max-pool to half resolution, then a ConvBlock that doubles the width."""

    def __init__(self, in_channels: int, out_channels: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        out_channels = 2 * in_channels if out_channels is None else out_channels
        self.block = ConvBlock(in_channels, out_channels, mid_channels=in_channels, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.block(F.maxpool2d(x))

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        n, c, h, w = shape
        pooled = (n, c, h // 2, w // 2)
        counter.elementwise(numel(pooled), CostCounter.MAXPOOL)
        return self.block.profile(counter, pooled)


class EcaLayer(Module):
    """Efficient channel attention: x scaled by sigmoid(conv1d(GAP(x)))."""

    def __init__(self, channels: int, kernel_size: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        k = eca_kernel_size(channels) if kernel_size is None else kernel_size
        if k % 2 == 0:
            raise ShapeError(f"ECA kernel size must be odd, got {k}")
        self.channels = channels
        self.kernel = Parameter(he_uniform((k,), k, rng))

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[0], x.shape[1]
        pooled = F.global_avg_pool(x).reshape(n, c)
        scale = F.sigmoid(F.conv1d_channels(pooled, self.kernel)).reshape(n, c, 1, 1)
        return F.mul_channelwise(x, scale)

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        n, c = shape[0], shape[1]
        counter.elementwise(numel(shape), CostCounter.ADD)
        counter.conv(n * c, self.kernel.shape[0], bias=False)
        counter.elementwise(n * c, CostCounter.SIGMOID)
        counter.elementwise(numel(shape), CostCounter.MUL)
        return shape


class CcaLayer(Module):
    """
    Channel cross attention between a skip tensor and the upsampled decoder
    tensor: skip · sigmoid(L1·GAP(skip) + L2·GAP(decoder)).
    """

    def __init__(self, skip_channels: int, decoder_channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.skip_channels = skip_channels
        self.decoder_channels = decoder_channels
        self.skip_map = Linear(skip_channels, skip_channels, rng=rng)
        self.decoder_map = Linear(decoder_channels, skip_channels, rng=rng)

    def forward(self, skip: Tensor, decoder: Tensor) -> Tensor:
        if skip.ndim != 4 or decoder.ndim != 4 or skip.shape[0] != decoder.shape[0]:
            raise ShapeError(f"CCA cannot pair skip {skip.shape} with decoder {decoder.shape}")
        if skip.shape[1] != self.skip_channels or decoder.shape[1] != self.decoder_channels:
            raise ShapeError(
                f"CCA expects {self.skip_channels} skip and {self.decoder_channels} decoder channels, "
                f"got {skip.shape[1]} and {decoder.shape[1]}"
            )
        n = skip.shape[0]
        skip_desc = F.global_avg_pool(skip).reshape(n, self.skip_channels)
        dec_desc = F.global_avg_pool(decoder).reshape(n, self.decoder_channels)
        gate = F.sigmoid(self.skip_map(skip_desc) + self.decoder_map(dec_desc))
        return F.mul_channelwise(skip, gate.reshape(n, self.skip_channels, 1, 1))

    def profile(self, counter: CostCounter, skip_shape: Shape, decoder_shape: Shape) -> Shape:
        n = skip_shape[0]
        counter.elementwise(numel(skip_shape) + numel(decoder_shape), CostCounter.ADD)
        self.skip_map.profile(counter, (n, self.skip_channels))
        self.decoder_map.profile(counter, (n, self.decoder_channels))
        counter.elementwise(n * self.skip_channels, CostCounter.ADD + CostCounter.SIGMOID)
        counter.elementwise(numel(skip_shape), CostCounter.MUL)
        return skip_shape


class UpBlock(Module):
    """
    Decoder stage: upsample, gate the skip tensor with CCA, concatenate
    [gated skip, upsampled] and reduce to the skip's width.
    """

    def __init__(self, decoder_channels: int, skip_channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.cca = CcaLayer(skip_channels, decoder_channels, rng)
        self.block = ConvBlock(skip_channels + decoder_channels, skip_channels, rng=rng)

    def forward(self, decoder_in: Tensor, skip: Tensor) -> Tensor:
        up = F.bilinear_upsample2x(decoder_in)
        if up.shape[2:] != skip.shape[2:]:
            raise ShapeError(f"upsampled decoder {up.shape} does not match skip {skip.shape} spatially")
        gated = self.cca(skip, up)
        return self.block(F.concat_channels(gated, up))

    def profile(self, counter: CostCounter, decoder_shape: Shape, skip_shape: Shape) -> Shape:
        n, c, h, w = decoder_shape
        up = (n, c, 2 * h, 2 * w)
        counter.elementwise(numel(up), CostCounter.BILINEAR)
        self.cca.profile(counter, skip_shape, up)
        return self.block.profile(counter, (n, skip_shape[1] + c, up[2], up[3]))
