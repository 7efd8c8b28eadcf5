"""
FusionU-Net: a U-Net encoder and decoder whose skip connections pass
through the fusion module.
"""
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .blocks import ConvBlock, DownBlock, UpBlock
from .cost import CostCounter, Shape
from .errors import CheckpointError, ConfigError, ShapeError
from .fusion import FeaturePyramid, FusionMode, FusionModule, ResampleMode
from .layers import Conv2d, Module
from .serialization import read_checkpoint, write_checkpoint
from .tensor import DTYPES, Tensor, default_dtype

logger = logging.getLogger(__name__)

SIDE_MULTIPLE = 16


@dataclass
class FusionConfig:
    in_channels: int = 3
    n_classes: int = 2
    base_width: int = 64
    input_side: int = 224
    fusion_mode: FusionMode = FusionMode.BOTH
    resample_mode: ResampleMode = ResampleMode.REORGANIZE_GROUPCONV
    fuse_stack: int = 1
    precision: str = "float64"

    def __post_init__(self):
        try:
            self.fusion_mode = FusionMode(self.fusion_mode)
            self.resample_mode = ResampleMode(self.resample_mode)
        except ValueError as e:
            raise ConfigError(str(e))
        if self.input_side <= 0 or self.input_side % SIDE_MULTIPLE:
            raise ConfigError(f"input_side must be a positive multiple of {SIDE_MULTIPLE}, got {self.input_side}")
        if self.base_width < 4 or self.base_width % 4:
            raise ConfigError(f"base_width must be ≥ 4 and divisible by 4, got {self.base_width}")
        if self.in_channels < 1 or self.n_classes < 2:
            raise ConfigError(f"need in_channels ≥ 1 and n_classes ≥ 2, got {self.in_channels}, {self.n_classes}")
        if self.fuse_stack < 1:
            raise ConfigError(f"fuse_stack must be positive, got {self.fuse_stack}")
        if self.precision not in DTYPES:
            raise ConfigError(f"precision must be one of {list(DTYPES)}, got {self.precision}")

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "FusionConfig":
        """'desk' (C=16, S=64, single precision) for CPU training runs, 'paper' (C=64, S=224) for accounting."""
        presets = {"desk": dict(base_width=16, input_side=64, precision="float32"),
                   "paper": dict(base_width=64, input_side=224)}
        if name not in presets:
            raise ConfigError(f"Unknown model preset '{name}'. Available: {list(presets)}")
        return cls(**{**presets[name], **overrides})

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FusionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["fusion_mode"] = self.fusion_mode.value
        data["resample_mode"] = self.resample_mode.value
        return data

    def widths(self) -> List[int]:
        """Channel plan T1..T4 then the bottleneck."""
        return [self.base_width * 2 ** i for i in range(5)]


class FusionUNet(Module):
    def __init__(self, config: FusionConfig, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        c1, c2, c3, c4, c5 = config.widths()
        self.stem = ConvBlock(config.in_channels, c1, rng=rng)
        self.down = [DownBlock(c, rng=rng) for c in (c1, c2, c3, c4)]
        self.fusion = FusionModule(c1, config.fusion_mode, config.resample_mode, config.fuse_stack, rng)
        self.up = [UpBlock(dec, skip, rng) for dec, skip in ((c5, c4), (c4, c3), (c3, c2), (c2, c1))]
        self.head = Conv2d(c1, config.n_classes, 1, padding=0, rng=rng)

    @property
    def dtype(self) -> np.dtype:
        return self.head.weight.dtype

    def _check_input(self, x: Tensor) -> Tensor:
        expected = (self.config.in_channels, self.config.input_side, self.config.input_side)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"model expects N×{expected[0]}×{expected[1]}×{expected[2]} input, got {x.shape}")
        return x if x.dtype == self.dtype else Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)

    def encode(self, x: Tensor) -> FeaturePyramid:
        x = self._check_input(x)
        t = [self.stem(x)]
        for block in self.down:
            t.append(block(t[-1]))
        return FeaturePyramid(t[:4], bottleneck=t[4])

    def decode(self, pyramid: FeaturePyramid) -> Tensor:
        d = pyramid.bottleneck
        for block, skip in zip(self.up, reversed(pyramid.t)):
            d = block(d, skip)
        return self.head(d)

    def forward(self, x: Tensor) -> Tensor:
        """N×in×S×S images to N×n_classes×S×S logits."""
        return self.decode(self.fusion(self.encode(x)))

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        shapes = [self.stem.profile(counter, tuple(shape))]
        for block in self.down:
            shapes.append(block.profile(counter, shapes[-1]))
        skips = self.fusion.profile(counter, shapes[:4])
        d = shapes[4]
        for block, skip in zip(self.up, reversed(skips)):
            d = block.profile(counter, d, skip)
        return self.head.profile(counter, d)

    def pyramid_shapes(self, batch: int = 1) -> List[Shape]:
        """T1..T4 and bottleneck shapes from the shape-only pass."""
        side = self.config.input_side
        counter = CostCounter()
        shapes = [self.stem.profile(counter, (batch, self.config.in_channels, side, side))]
        for block in self.down:
            shapes.append(block.profile(counter, shapes[-1]))
        return shapes


def build(config: FusionConfig, seed: int = 0) -> FusionUNet:
    """
    Build a model with He-uniform conv weights, unit/zero norm parameters.

    Two builds from the same config and seed are parameter-identical.
    """
    with default_dtype(config.precision):
        model = FusionUNet(config, np.random.default_rng(seed))
    logger.debug("built FusionUNet C=%d S=%d mode=%s resample=%s", config.base_width, config.input_side,
                 config.fusion_mode.value, config.resample_mode.value)
    return model


def save_checkpoint(model: FusionUNet, path: Union[str, Path]) -> None:
    write_checkpoint(path, model.config.to_dict(), model.state_arrays())
    logger.info("saved checkpoint to %s", path)


def load_checkpoint(path: Union[str, Path], expected: Optional[FusionConfig] = None) -> FusionUNet:
    """
    Rebuild a model from a checkpoint.

    Args:
        path (Union[str, Path]): Checkpoint file
        expected (Optional[FusionConfig]): If given, the stored config must equal it

    Raises:
        CheckpointError: On a corrupt file or a config/precision mismatch
    """
    stored, arrays = read_checkpoint(path)
    try:
        config = FusionConfig.from_dict(stored)
    except (ConfigError, TypeError) as e:
        raise CheckpointError(f"checkpoint config is invalid: {e}")
    if expected is not None and expected != config:
        if expected.precision != config.precision:
            raise CheckpointError(
                f"checkpoint precision {config.precision} does not match requested {expected.precision}")
        raise CheckpointError(f"checkpoint config {config.to_dict()} does not match {expected.to_dict()}")
    model = build(config)
    model.load_state_arrays(arrays)
    return model


def load_weights(model: FusionUNet, path: Union[str, Path]) -> None:
    """Load a checkpoint into an existing model with the same config."""
    stored, arrays = read_checkpoint(path)
    if stored != model.config.to_dict():
        raise CheckpointError(f"checkpoint config {stored} does not match model config {model.config.to_dict()}")
    model.load_state_arrays(arrays)
