import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from utils import functional as F
from utils.blocks import CcaLayer, ConvBlock, DownBlock, EcaLayer, UpBlock
from utils.errors import AuditFailure
from utils.fusion import (DownFuse, FeaturePyramid, FuseBlock, ResampleMode, UpFuse, inverse_reorganize,
                          reorganize)
from utils.gradcheck import grad_check
from utils.layers import Module
from utils.losses import ce_loss, combined_loss, dice_loss, focal_loss
from utils.model import FusionConfig, build
from utils.tensor import Function, Tensor, default_dtype

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4

Builder = Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[Tensor]]]


@dataclass
class AuditCase:
    """One finite-difference check and the tape operations it exercises."""

    name: str
    covers: Tuple[str, ...]
    build: Builder
    eps: float = 1e-4
    samples: Optional[int] = None


@dataclass
class AuditResult:
    name: str
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _leaf(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng: np.random.Generator, *shape: int) -> Tensor:
    magnitude = rng.uniform(0.1, 1.0, size=shape)
    return Tensor(np.where(rng.random(shape) < 0.5, -magnitude, magnitude), requires_grad=True)


def _projection(rng: np.random.Generator, fn: Callable[..., Tensor]) -> Callable[..., Tensor]:
    """Scalar objective Σ fn(...)·W with W drawn once per output shape and then fixed."""
    weights: Dict[Tuple[int, ...], np.ndarray] = {}

    def f(*inputs: Tensor) -> Tensor:
        out = fn(*inputs)
        if out.shape not in weights:
            weights[out.shape] = rng.normal(size=out.shape)
        return (out * Tensor(weights[out.shape])).sum()
    return f


def _module_case(module: Module, inputs: List[Tensor], forward: Callable[..., Tensor],
                 rng: np.random.Generator, params: int = 3) -> Tuple[Callable[..., Tensor], List[Tensor]]:
    """Check a module's inputs and a few of its parameters at once."""
    chosen = module.parameters()[:params] + module.parameters()[-params:]
    unique = list({id(p): p for p in chosen}.values())
    n_inputs = len(inputs)
    project = _projection(rng, lambda *ts: forward(*ts[:n_inputs]))
    return project, inputs + unique


def _tensor_ops(rng):
    a = _leaf(rng, 2, 3, low=0.5, high=1.5)
    b = _leaf(rng, 2, 3, low=0.5, high=1.5)
    c = _leaf(rng, 3)
    f = _projection(rng, lambda a, b, c: ((a * b + a / b - (-c)).reshape(3, 2) ** 2.0).mean(axis=0)
                    + (a.exp() - b.log()).sum(axis=1).sum() + (a - c).mean())
    return f, [a, b, c]


def _conv_grouped(rng):
    x = _leaf(rng, 2, 4, 5, 5)
    w = _leaf(rng, 6, 2, 3, 3)
    bias = _leaf(rng, 6)
    return _projection(rng, lambda x, w, b: F.conv2d(x, F.ConvParams(w, b, 1, 1, 2))), [x, w, bias]


def _conv_strided(rng):
    x = _leaf(rng, 1, 3, 7, 7)
    w = _leaf(rng, 4, 3, 3, 3)
    return _projection(rng, lambda x, w: F.conv2d(x, F.ConvParams(w, None, 2, 0, 1))), [x, w]


def _batchnorm(training: bool) -> Builder:
    def build_case(rng):
        x = _leaf(rng, 3, 2, 3, 3)
        gamma = _leaf(rng, 2, low=0.5, high=1.5)
        beta = _leaf(rng, 2)
        mean, var = rng.normal(size=2), rng.uniform(0.5, 2.0, size=2)

        def forward(x, gamma, beta):
            return F.batchnorm2d(x, gamma, beta, mean.copy(), var.copy(), training=training)
        return _projection(rng, forward), [x, gamma, beta]
    return build_case


def _unary(op: Callable[[Tensor], Tensor], *shape: int, kink_free: bool = False) -> Builder:
    def build_case(rng):
        x = _away_from_zero(rng, *shape) if kink_free else _leaf(rng, *shape)
        return _projection(rng, op), [x]
    return build_case


def _conv1d(rng):
    v = _leaf(rng, 2, 8)
    k = _leaf(rng, 3)
    return _projection(rng, F.conv1d_channels), [v, k]


def _concat(rng):
    return _projection(rng, F.concat_channels), [_leaf(rng, 2, 2, 3, 3), _leaf(rng, 2, 3, 3, 3)]


def _add_weighted(rng):
    a, b = _leaf(rng, 1, 2, 3, 3), _leaf(rng, 1, 2, 3, 3)
    alpha = Tensor(np.array(0.7), requires_grad=True)
    beta = Tensor(np.array(-0.3), requires_grad=True)
    return _projection(rng, F.add_weighted), [a, b, alpha, beta]


def _mul_channelwise(rng):
    return _projection(rng, F.mul_channelwise), [_leaf(rng, 2, 3, 4, 4), _leaf(rng, 2, 3, 1, 1)]


def _linear(rng):
    return _projection(rng, F.linear), [_leaf(rng, 3, 5), _leaf(rng, 4, 5), _leaf(rng, 4)]


def _loss(loss: Callable[[Tensor, np.ndarray], Tensor]) -> Builder:
    def build_case(rng):
        logits = _leaf(rng, 2, 3, 4, 4, low=-2.0, high=2.0)
        mask = rng.integers(0, 3, size=(2, 4, 4))
        return (lambda z: loss(z, mask)), [logits]
    return build_case


def _conv_block(rng):
    block = ConvBlock(2, 4, rng=rng)
    return _module_case(block, [_leaf(rng, 2, 2, 6, 6)], block, rng)


def _down_block(rng):
    block = DownBlock(2, rng=rng)
    return _module_case(block, [_leaf(rng, 2, 2, 8, 8)], block, rng)


def _eca(rng):
    layer = EcaLayer(8, rng=rng)
    return _module_case(layer, [_leaf(rng, 2, 8, 3, 3)], layer, rng)


def _cca(rng):
    layer = CcaLayer(4, 6, rng=rng)
    return _module_case(layer, [_leaf(rng, 2, 4, 4, 4), _leaf(rng, 2, 6, 4, 4)], layer, rng)


def _up_block(rng):
    block = UpBlock(4, 2, rng=rng)
    return _module_case(block, [_leaf(rng, 2, 4, 3, 3), _leaf(rng, 2, 2, 6, 6)], block, rng)


def _fuse_unit(direction: str, resample_mode: ResampleMode) -> Builder:
    def build_case(rng):
        shallow, deep = _leaf(rng, 2, 4, 8, 8), _leaf(rng, 2, 8, 4, 4)
        if direction == "down":
            unit = DownFuse(4, resample_mode, rng)
            return _module_case(unit, [shallow, deep], unit, rng)
        unit = UpFuse(4, resample_mode, rng)
        return _module_case(unit, [deep, shallow], unit, rng)
    return build_case


def _fuse_block(rng):
    block = FuseBlock(4, rng=rng)
    levels = [_leaf(rng, 2, 4 * 2 ** i, 16 // 2 ** i, 16 // 2 ** i) for i in range(4)]
    weights = [Tensor(rng.normal(size=t.shape)) for t in levels]
    picks = block.parameters()[:3] + block.parameters()[-3:]

    def f(*inputs: Tensor) -> Tensor:
        fused = block(FeaturePyramid(list(inputs[:4])))
        total = (fused.t[0] * weights[0]).sum()
        for t, w in zip(fused.t[1:], weights[1:]):
            total = total + (t * w).sum()
        return total
    return f, levels + picks


def _full_model(rng):
    config = FusionConfig(base_width=8, input_side=32, n_classes=2)
    model = build(config, seed=int(rng.integers(1 << 31)))
    x = _leaf(rng, 2, 3, 32, 32)
    picks = [model.stem.first.conv.weight, model.fusion.blocks[0].down[0].alpha,
             model.fusion.blocks[0].up[-1].eca.kernel, model.up[0].cca.skip_map.weight, model.head.weight]
    return _projection(rng, lambda x, *params: model(x)), [x] + picks


def default_cases() -> List[AuditCase]:
    """Every audit the suite runs, each naming the tape operations it covers."""
    return [
        AuditCase("tensor arithmetic", ("Add", "Sub", "Mul", "Div", "Neg", "Pow", "Exp", "Log", "Sum", "Mean",
                                        "Reshape"), _tensor_ops),
        AuditCase("conv2d grouped + bias", ("Convolution",), _conv_grouped),
        AuditCase("conv2d strided", ("Convolution",), _conv_strided),
        AuditCase("maxpool2d", ("MaxPool",), _unary(F.maxpool2d, 1, 2, 4, 4)),
        AuditCase("bilinear_upsample2x", ("BilinearUpsample",), _unary(F.bilinear_upsample2x, 1, 2, 3, 4)),
        AuditCase("relu", ("ReLU",), _unary(F.relu, 2, 3, 3, 3, kink_free=True)),
        AuditCase("sigmoid", ("Sigmoid",), _unary(F.sigmoid, 2, 3, 3, 3)),
        AuditCase("softmax_channels", ("SoftmaxChannels",), _unary(F.softmax_channels, 2, 4, 3, 3)),
        AuditCase("log_softmax_channels", ("LogSoftmaxChannels",), _unary(F.log_softmax_channels, 2, 4, 3, 3)),
        AuditCase("batchnorm2d train", ("BatchNorm",), _batchnorm(True)),
        AuditCase("batchnorm2d eval", ("BatchNorm",), _batchnorm(False)),
        AuditCase("global_avg_pool", ("GlobalAvgPool",), _unary(F.global_avg_pool, 2, 3, 4, 5)),
        AuditCase("conv1d_channels", ("ChannelConv1d",), _conv1d),
        AuditCase("concat_channels", ("ConcatChannels",), _concat),
        AuditCase("add_weighted", ("AddWeighted",), _add_weighted),
        AuditCase("mul_channelwise", ("MulChannelwise",), _mul_channelwise),
        AuditCase("linear", ("Affine",), _linear),
        AuditCase("reorganize", ("Reorganize",), _unary(reorganize, 1, 2, 4, 6)),
        AuditCase("inverse_reorganize", ("InverseReorganize",), _unary(inverse_reorganize, 1, 8, 2, 3)),
        AuditCase("ce_loss", (), _loss(ce_loss)),
        AuditCase("dice_loss", (), _loss(dice_loss)),
        AuditCase("focal_loss", (), _loss(focal_loss)),
        AuditCase("combined_loss", (), _loss(combined_loss)),
        AuditCase("ConvBlock", (), _conv_block, eps=1e-5, samples=12),
        AuditCase("DownBlock", (), _down_block, eps=1e-5, samples=12),
        AuditCase("EcaLayer", (), _eca, eps=1e-5, samples=12),
        AuditCase("CcaLayer", (), _cca, eps=1e-5, samples=12),
        AuditCase("UpBlock", (), _up_block, eps=1e-5, samples=12),
        AuditCase("DownFuse", (), _fuse_unit("down", ResampleMode.REORGANIZE_GROUPCONV), eps=1e-5, samples=12),
        AuditCase("UpFuse", (), _fuse_unit("up", ResampleMode.REORGANIZE_GROUPCONV), eps=1e-5, samples=12),
        AuditCase("DownFuse pool_conv", (), _fuse_unit("down", ResampleMode.POOL_CONV), eps=1e-5, samples=12),
        AuditCase("UpFuse pool_conv", (), _fuse_unit("up", ResampleMode.POOL_CONV), eps=1e-5, samples=12),
        AuditCase("FuseBlock", (), _fuse_block, eps=1e-5, samples=8),
        AuditCase("FusionUNet C=8 S=32", (), _full_model, eps=1e-5, samples=6),
    ]


def unaudited_operations(cases: Iterable[AuditCase], registry: Optional[Dict[str, type]] = None) -> List[str]:
    """Tape operations with a backward rule that no case covers."""
    registry = Function.registry if registry is None else registry
    covered = {name for case in cases for name in case.covers}
    return sorted(name for name in registry if name not in covered)


class GradientAuditor:
    """Runs every audit case in double precision and checks suite completeness."""

    def __init__(self, cases: Optional[Sequence[AuditCase]] = None, seed: int = 0):
        self.cases = list(cases) if cases is not None else default_cases()
        self.seed = seed

    def run_case(self, case: AuditCase, rng: np.random.Generator) -> AuditResult:
        started = time.perf_counter()
        with default_dtype("float64"):
            f, inputs = case.build(rng)
        error = grad_check(f, inputs, eps=case.eps, samples=case.samples, seed=int(rng.integers(1 << 31)),
                           refine_above=TOLERANCE)
        result = AuditResult(case.name, error, time.perf_counter() - started)
        logger.info("%-28s max rel err %.3e %s", case.name, error, "ok" if result.passed else "FAILED")
        return result

    def run(self) -> Tuple[List[AuditResult], List[str]]:
        children = np.random.SeedSequence(self.seed).spawn(len(self.cases))
        results = [self.run_case(case, np.random.default_rng(child)) for case, child in zip(self.cases, children)]
        return results, unaudited_operations(self.cases)

    def audit(self) -> List[AuditResult]:
        """
        Raises:
            AuditFailure: If any case exceeds the tolerance or an operation is uncovered
        """
        results, missing = self.run()
        failed = [r.name for r in results if not r.passed]
        if missing:
            raise AuditFailure(f"operations without gradient audit: {missing}")
        if failed:
            raise AuditFailure(f"gradient audit failed for: {failed}")
        return results

    @staticmethod
    def generate_detailed_report(results: List[AuditResult], missing: List[str]) -> str:
        report = ["=" * 60, "GRADIENT AUDIT REPORT", "=" * 60, ""]
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            report.append(f"  {status}  {r.name:<28} {r.max_rel_error:.3e}  ({r.seconds:.2f}s)")
        report.append("")
        if missing:
            report.append(f"Unaudited operations: {', '.join(missing)}")
        passed = sum(r.passed for r in results)
        report.append(f"{passed}/{len(results)} cases below {TOLERANCE:g} relative error")
        report.append("AUDIT PASSED" if passed == len(results) and not missing else "AUDIT FAILED")
        return "\n".join(report)


def run_gradient_audit(seed: int = 0) -> str:
    """
    Run the full finite-difference gradient audit.

    Returns:
        String listing every case's max relative error and the overall verdict
    """
    results, missing = GradientAuditor(seed=seed).run()
    return GradientAuditor.generate_detailed_report(results, missing)
