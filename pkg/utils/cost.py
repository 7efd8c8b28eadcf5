"""
Analytic cost accounting from a shape-only pass over a module tree.

FLOP convention: FLOPs = 2 × multiply–accumulates + elementwise operations,
where batch norm costs 2 per element, relu/sigmoid/add/multiply 1 per
element, a max-pool output 3 comparisons and a bilinear output 4 operations.
Bias additions count 1 per output.
"""
from dataclasses import dataclass
from typing import Any, Tuple

import numpy as np

Shape = Tuple[int, ...]

REFERENCE_PARAMS = 25.80e6
REFERENCE_FLOPS = 55.95e9
POOL_CONV_REFERENCE_PARAMS = 34.98e6
POOL_CONV_REFERENCE_FLOPS = 97.15e9
PARAM_TOLERANCE = 0.20
FLOP_TOLERANCE = 0.25


@dataclass
class CostCounter:
    BATCHNORM = 2
    RELU = 1
    SIGMOID = 1
    ADD = 1
    MUL = 1
    MAXPOOL = 3
    BILINEAR = 4

    macs: int = 0
    elementwise_ops: int = 0

    def conv(self, outputs: int, macs_per_output: int, bias: bool) -> None:
        self.macs += outputs * macs_per_output
        if bias:
            self.elementwise(outputs, CostCounter.ADD)

    def elementwise(self, count: int, per_element: int) -> None:
        self.elementwise_ops += count * per_element

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.elementwise_ops


def numel(shape: Shape) -> int:
    return int(np.prod(shape))


def count_params(model: Any) -> int:
    """Exact number of trainable scalars."""
    return sum(p.size for p in model.parameters())


def profile_model(model: Any, input_shape: Shape) -> CostCounter:
    counter = CostCounter()
    model.profile(counter, tuple(input_shape))
    return counter


def count_macs(model: Any, input_shape: Shape) -> int:
    return profile_model(model, input_shape).macs


def count_flops(model: Any, input_shape: Shape) -> int:
    return profile_model(model, input_shape).flops


def within_band(value: float, reference: float, tolerance: float) -> bool:
    return abs(value - reference) <= tolerance * reference
