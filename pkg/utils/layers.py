"""
Parameterized layers and the `Module` container they share.

A module's parameters and buffers are discovered by walking its attributes
in assignment order, which fixes the order used by checkpoints.
"""
import math
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .cost import CostCounter, Shape
from .errors import CheckpointError, ShapeError
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """A leaf tensor that always requires grad."""

    def __init__(self, data: np.ndarray):
        super().__init__(np.asarray(data, dtype=get_default_dtype()), requires_grad=True)


def he_uniform(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class for every network component."""

    buffer_names: Tuple[str, ...] = ()

    def __init__(self) -> None:
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        """Record this module's cost for an input of `shape`; return the output shape."""
        raise NotImplementedError(f"{type(self).__name__} has no cost profile")

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_state(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        """Parameters and buffers in registration order, as raw arrays."""
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value.data
            elif name in self.buffer_names:
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_state(f"{prefix}{name}.")

    def state_arrays(self) -> List[np.ndarray]:
        return [array for _, array in self.named_state()]

    def load_state_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        """
        Overwrite parameters and buffers from an ordered list of arrays.

        Raises:
            CheckpointError: If the count, a shape or a dtype does not match
        """
        targets = list(self.named_state())
        if len(arrays) != len(targets):
            raise CheckpointError(f"checkpoint holds {len(arrays)} tensors, model expects {len(targets)}")
        for (name, target), array in zip(targets, arrays):
            if target.shape != array.shape:
                raise CheckpointError(f"{name}: checkpoint shape {array.shape} != model shape {target.shape}")
            if target.dtype != array.dtype:
                raise CheckpointError(f"{name}: checkpoint precision {array.dtype} != model precision {target.dtype}")
            np.copyto(target, array)

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 padding: Optional[int] = None, groups: int = 1, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if in_channels % groups or out_channels % groups:
            raise ShapeError(f"channels {in_channels}->{out_channels} not divisible by {groups} groups")
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        self.weight = Parameter(he_uniform(
            (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in, rng))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.groups = groups

    @property
    def params(self) -> F.ConvParams:
        return F.ConvParams(self.weight, self.bias, self.stride, self.padding, self.groups)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.params)

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        n, c, h, w = shape
        c_out, c_group, kh, kw = self.weight.shape
        ho = F.conv_output_size(h, kh, self.stride, self.padding)
        wo = F.conv_output_size(w, kw, self.stride, self.padding)
        counter.conv(n * c_out * ho * wo, c_group * kh * kw, self.bias is not None)
        return (n, c_out, ho, wo)


class BatchNorm2d(Module):
    buffer_names = ('running_mean', 'running_var')

    def __init__(self, channels: int, momentum: float = F.BN_MOMENTUM, eps: float = F.BN_EPS):
        super().__init__()
        dtype = get_default_dtype()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, momentum=self.momentum, eps=self.eps)

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        counter.elementwise(int(np.prod(shape)), CostCounter.BATCHNORM)
        return shape


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(he_uniform((out_features, in_features), in_features, rng))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, v: Tensor) -> Tensor:
        return F.linear(v, self.weight, self.bias)

    def profile(self, counter: CostCounter, shape: Shape) -> Shape:
        n = shape[0]
        out_features, in_features = self.weight.shape
        counter.conv(n * out_features, in_features, self.bias is not None)
        return (n, out_features)
