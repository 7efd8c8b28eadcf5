"""
Skip-connection fusion over the encoder pyramid T1..T4.

A DownFuse unit merges a shallow map (C, H, W) into its deeper neighbour
(2C, H/2, W/2); an UpFuse unit merges a deep map back into its shallower
neighbour. A FuseBlock runs one downward round T1→T4 and one upward round
T4→T1, each stage reading the most recently updated neighbour.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .blocks import ConvBnRelu, EcaLayer
from .cost import CostCounter, Shape, numel
from .errors import ShapeError
from .layers import Conv2d, Module, Parameter
from .tensor import Function, Tensor

logger = logging.getLogger(__name__)

PYRAMID_DEPTH = 4
MIX_INIT = 0.5


class FusionMode(str, Enum):
    NONE = "none"
    DOWN_ONLY = "down_only"
    UP_ONLY = "up_only"
    BOTH = "both"


class ResampleMode(str, Enum):
    REORGANIZE_GROUPCONV = "reorganize_groupconv"
    POOL_CONV = "pool_conv"


class Reorganize(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, 4 * c, h // 2, w // 2)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (_depth_to_space(grad),)


class InverseReorganize(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return _depth_to_space(x)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n, c, h, w = grad.shape
        return (grad.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, 4 * c, h // 2, w // 2),)


def _depth_to_space(x: np.ndarray) -> np.ndarray:
    n, c4, h, w = x.shape
    c = c4 // 4
    return x.reshape(n, c, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, 2 * h, 2 * w)


def reorganize(x: Tensor) -> Tensor:
    """
    Space-to-depth: out[n, 4c + 2·dy + dx, i, j] = x[n, c, 2i + dy, 2j + dx].

    Raises:
        ShapeError: If H or W is odd
    """
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"reorganize needs N×C×H×W with even H and W, got {x.shape}")
    return Reorganize.apply(x)


def inverse_reorganize(x: Tensor) -> Tensor:
    """
    Depth-to-space, the exact inverse of `reorganize`.

    Raises:
        ShapeError: If the channel count is not divisible by 4
    """
    if x.ndim != 4 or x.shape[1] % 4:
        raise ShapeError(f"inverse_reorganize needs a channel count divisible by 4, got {x.shape}")
    return InverseReorganize.apply(x)


class GroupFuseDown(Module):
    """Grouped 3×3 conv 4C→2C with C groups; each group sees one original channel's 2×2 block."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.channels = channels
        self.conv = Conv2d(4 * channels, 2 * channels, 3, padding=1, groups=channels, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 4 * self.channels:
            raise ShapeError(f"group_fuse_down expects {4 * self.channels} channels, got shape {x.shape}")
        return self.conv(x)

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        return self.conv.profile(counter, shape)


class GroupFuseUp(Module):
    """Grouped 3×3 conv 2C→4C with C groups, ahead of depth-to-space."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.channels = channels
        self.conv = Conv2d(2 * channels, 4 * channels, 3, padding=1, groups=channels, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 2 * self.channels:
            raise ShapeError(f"group_fuse_up expects {2 * self.channels} channels, got shape {x.shape}")
        return self.conv(x)

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        return self.conv.profile(counter, shape)


class ReorganizeDown(Module):
    """(C, H, W) → (2C, H/2, W/2) by reorganize then group_fuse_down."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.fuse = GroupFuseDown(channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fuse(reorganize(x))

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        n, c, h, w = shape
        return self.fuse.profile(counter, (n, 4 * c, h // 2, w // 2))


class ReorganizeUp(Module):
    """(2C, H/2, W/2) → (C, H, W) by group_fuse_up then inverse_reorganize."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.fuse = GroupFuseUp(channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return inverse_reorganize(self.fuse(x))

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        n, c4, h, w = self.fuse.profile(counter, shape)
        return (n, c4 // 4, 2 * h, 2 * w)


class PoolConvDown(Module):
    """(C, H, W) → (2C, H/2, W/2) by max-pool then an ungrouped 3×3 conv."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(channels, 2 * channels, 3, padding=1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(F.maxpool2d(x))

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        n, c, h, w = shape
        pooled = (n, c, h // 2, w // 2)
        counter.elementwise(numel(pooled), CostCounter.MAXPOOL)
        return self.conv.profile(counter, pooled)


class UpsampleConvUp(Module):
    """(2C, H/2, W/2) → (C, H, W) by bilinear upsampling then an ungrouped 3×3 conv."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(2 * channels, channels, 3, padding=1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(F.bilinear_upsample2x(x))

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        n, c, h, w = shape
        up = (n, c, 2 * h, 2 * w)
        counter.elementwise(numel(up), CostCounter.BILINEAR)
        return self.conv.profile(counter, up)


def _mix_weight() -> Parameter:
    return Parameter(np.array(MIX_INIT))


class _FuseUnit(Module):
    """Shared tail of both fuse directions: weighted sum, ConvBnRelu, ECA."""

    def __init__(self, resample: Module, out_channels: int, rng: Optional[np.random.Generator]):
        super().__init__()
        self.resample = resample
        self.alpha = _mix_weight()
        self.beta = _mix_weight()
        self.post = ConvBnRelu(out_channels, out_channels, rng)
        self.eca = EcaLayer(out_channels, rng=rng)

    def combine(self, moved: Tensor, kept: Tensor) -> Tensor:
        return self.eca(self.post(F.add_weighted(moved, kept, self.alpha, self.beta)))

    def profile_tail(self, counter: CostCounter, shape: Shape) -> Shape:
        counter.elementwise(numel(shape), 2 * CostCounter.MUL + CostCounter.ADD)
        return self.eca.profile(counter, self.post.profile(counter, shape))


class DownFuse(_FuseUnit):
    """Merge t_shallow (C, H, W) into t_deep (2C, H/2, W/2)."""

    def __init__(self, channels: int, resample_mode: ResampleMode = ResampleMode.REORGANIZE_GROUPCONV,
                 rng: Optional[np.random.Generator] = None):
        resample = (ReorganizeDown(channels, rng) if resample_mode == ResampleMode.REORGANIZE_GROUPCONV
                    else PoolConvDown(channels, rng))
        super().__init__(resample, 2 * channels, rng)
        self.channels = channels

    def forward(self, t_shallow: Tensor, t_deep: Tensor) -> Tensor:
        n, c, h, w = t_shallow.shape
        if c != self.channels or t_deep.shape != (n, 2 * c, h // 2, w // 2) or h % 2 or w % 2:
            raise ShapeError(f"DownFuse({self.channels}) cannot merge {t_shallow.shape} into {t_deep.shape}")
        return self.combine(self.resample(t_shallow), t_deep)

    def profile(self, counter: CostCounter, shallow: Shape, deep: Shape) -> Shape:
        self.resample.profile(counter, shallow)
        return self.profile_tail(counter, deep)


class UpFuse(_FuseUnit):
    """Merge t_deep (2C, H/2, W/2) into t_shallow (C, H, W)."""

    def __init__(self, channels: int, resample_mode: ResampleMode = ResampleMode.REORGANIZE_GROUPCONV,
                 rng: Optional[np.random.Generator] = None):
        resample = (ReorganizeUp(channels, rng) if resample_mode == ResampleMode.REORGANIZE_GROUPCONV
                    else UpsampleConvUp(channels, rng))
        super().__init__(resample, channels, rng)
        self.channels = channels

    def forward(self, t_deep: Tensor, t_shallow: Tensor) -> Tensor:
        n, c, h, w = t_shallow.shape
        if c != self.channels or t_deep.shape != (n, 2 * c, h // 2, w // 2) or h % 2 or w % 2:
            raise ShapeError(f"UpFuse({self.channels}) cannot merge {t_deep.shape} into {t_shallow.shape}")
        return self.combine(self.resample(t_deep), t_shallow)

    def profile(self, counter: CostCounter, deep: Shape, shallow: Shape) -> Shape:
        self.resample.profile(counter, deep)
        return self.profile_tail(counter, shallow)


@dataclass
class FeaturePyramid:
    """Encoder outputs T1..T4 plus the bottleneck, which fusion never touches."""

    t: List[Tensor]
    bottleneck: Optional[Tensor] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ShapeError: Unless there are four maps whose channels double and
                whose spatial dims halve from one level to the next
        """
        if len(self.t) != PYRAMID_DEPTH:
            raise ShapeError(f"pyramid needs {PYRAMID_DEPTH} levels, got {len(self.t)}")
        for shallow, deep in zip(self.t, self.t[1:]):
            n, c, h, w = shallow.shape
            if h % 2 or w % 2 or deep.shape != (n, 2 * c, h // 2, w // 2):
                raise ShapeError(f"pyramid levels {shallow.shape} and {deep.shape} are not adjacent")

    @property
    def shapes(self) -> List[Shape]:
        return [t.shape for t in self.t]


class FuseBlock(Module):
    """One downward round then one upward round, as enabled by `mode`."""

    def __init__(self, channels: int, mode: FusionMode = FusionMode.BOTH,
                 resample_mode: ResampleMode = ResampleMode.REORGANIZE_GROUPCONV,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        widths = [channels * 2 ** i for i in range(PYRAMID_DEPTH - 1)]
        self.mode = FusionMode(mode)
        self.down: List[DownFuse] = []
        self.up: List[UpFuse] = []
        if self.mode in (FusionMode.BOTH, FusionMode.DOWN_ONLY):
            self.down = [DownFuse(c, resample_mode, rng) for c in widths]
        if self.mode in (FusionMode.BOTH, FusionMode.UP_ONLY):
            self.up = [UpFuse(c, resample_mode, rng) for c in reversed(widths)]

    def forward(self, pyramid: FeaturePyramid) -> FeaturePyramid:
        t = list(pyramid.t)
        for i, unit in enumerate(self.down):
            t[i + 1] = unit(t[i], t[i + 1])
        for unit, i in zip(self.up, range(PYRAMID_DEPTH - 2, -1, -1)):
            t[i] = unit(t[i + 1], t[i])
        return FeaturePyramid(t, pyramid.bottleneck)

    def profile(self, counter: CostCounter, shapes: Sequence[Shape]) -> List[Shape]:
        shapes = list(shapes)
        for i, unit in enumerate(self.down):
            shapes[i + 1] = unit.profile(counter, shapes[i], shapes[i + 1])
        for unit, i in zip(self.up, range(PYRAMID_DEPTH - 2, -1, -1)):
            shapes[i] = unit.profile(counter, shapes[i + 1], shapes[i])
        return shapes


class FusionModule(Module):
    """A stack of FuseBlocks; an empty stack is the identity."""

    def __init__(self, channels: int, mode: FusionMode = FusionMode.BOTH,
                 resample_mode: ResampleMode = ResampleMode.REORGANIZE_GROUPCONV, stack: int = 1,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.mode = FusionMode(mode)
        count = 0 if self.mode == FusionMode.NONE else stack
        self.blocks: List[FuseBlock] = [FuseBlock(channels, self.mode, resample_mode, rng) for _ in range(count)]
        logger.debug("fusion module: %d block(s), mode=%s, resample=%s", count, self.mode.value,
                     ResampleMode(resample_mode).value)

    def forward(self, pyramid: FeaturePyramid) -> FeaturePyramid:
        for block in self.blocks:
            pyramid = block(pyramid)
        return pyramid

    def profile(self, counter: CostCounter, shapes: Sequence[Shape]) -> List[Shape]:
        shapes = list(shapes)
        for block in self.blocks:
            shapes = block.profile(counter, shapes)
        return shapes
