import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from utils.config import RunConfig
from utils.cost import (FLOP_TOLERANCE, PARAM_TOLERANCE, POOL_CONV_REFERENCE_FLOPS, POOL_CONV_REFERENCE_PARAMS,
                        REFERENCE_FLOPS, REFERENCE_PARAMS, count_params, profile_model, within_band)
from utils.errors import FusionUNetError
from utils.fusion import ResampleMode
from utils.model import FusionConfig, build
from utils.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class CostSummary:
    config: FusionConfig
    params: int
    macs: int
    flops: int

    @property
    def params_in_band(self) -> bool:
        return within_band(self.params, REFERENCE_PARAMS, PARAM_TOLERANCE)

    @property
    def macs_in_band(self) -> bool:
        return within_band(self.macs, REFERENCE_FLOPS, FLOP_TOLERANCE)

    def to_dict(self) -> Dict[str, Any]:
        return {"config": self.config.to_dict(), "params": self.params, "macs": self.macs, "flops": self.flops}


def summarize(config: FusionConfig) -> CostSummary:
    """Parameter, MAC and FLOP counts for one image at the configured input size."""
    # counts do not depend on precision; single precision halves the build's memory
    model = build(FusionConfig.from_dict({**config.to_dict(), "precision": "float32"}))
    counter = profile_model(model, (1, config.in_channels, config.input_side, config.input_side))
    return CostSummary(config, count_params(model), counter.macs, counter.flops)


def measure_throughput(config: FusionConfig, repeats: int = 3, batch: int = 1, seed: int = 0) -> float:
    """Images per second of an eval-mode forward pass on random input."""
    model = build(config, seed=seed).eval()
    rng = np.random.default_rng(seed)
    x = Tensor(rng.random((batch, config.in_channels, config.input_side, config.input_side)).astype(model.dtype))
    with no_grad():
        model(x)
        started = time.perf_counter()
        for _ in range(repeats):
            model(x)
        elapsed = time.perf_counter() - started
    return batch * repeats / elapsed


def _band(value: float, reference: float, tolerance: float, scale: float, unit: str) -> str:
    low, high = reference * (1 - tolerance), reference * (1 + tolerance)
    verdict = "inside" if within_band(value, reference, tolerance) else "OUTSIDE"
    return f"{verdict} [{low / scale:,.2f}{unit}, {high / scale:,.2f}{unit}]"


def format_cost_report(main: CostSummary, alternative: Optional[CostSummary] = None,
                       throughput: Optional[float] = None) -> str:
    c = main.config
    report = ["=" * 60, "MODEL COST REPORT", "=" * 60, ""]
    report.append(f"Input 1×{c.in_channels}×{c.input_side}×{c.input_side}, base width {c.base_width}, "
                  f"fusion {c.fusion_mode.value}, resample {c.resample_mode.value}")
    report.append("")
    report.append(f"Parameters: {main.params:>16,}  ({main.params / 1e6:.2f}M)")
    report.append(f"MACs:       {main.macs:>16,}  ({main.macs / 1e9:.2f}G)")
    report.append(f"FLOPs:      {main.flops:>16,}  ({main.flops / 1e9:.2f}G, 2×MACs + elementwise)")
    if c.base_width == 64 and c.input_side == 224:
        report.append("")
        report.append(f"Reference figures: {REFERENCE_PARAMS / 1e6:.2f}M params, {REFERENCE_FLOPS / 1e9:.2f}G")
        params_band = _band(main.params, REFERENCE_PARAMS, PARAM_TOLERANCE, 1e6, "M")
        macs_band = _band(main.macs, REFERENCE_FLOPS, FLOP_TOLERANCE, 1e9, "G")
        report.append(f"  params ±{PARAM_TOLERANCE:.0%}: {params_band}")
        report.append(f"  MACs ±{FLOP_TOLERANCE:.0%}:   {macs_band}")
    if alternative is not None:
        a = alternative.config
        report.append("")
        report.append(f"With resample {a.resample_mode.value}: {alternative.params / 1e6:.2f}M params, "
                      f"{alternative.macs / 1e9:.2f}G MACs, {alternative.flops / 1e9:.2f}G FLOPs")
        report.append(f"  difference: {(alternative.params - main.params) / 1e6:+.2f}M params, "
                      f"{(alternative.macs - main.macs) / 1e9:+.2f}G MACs")
        if a.base_width == 64 and a.input_side == 224 and a.resample_mode == ResampleMode.POOL_CONV:
            report.append(f"  reference pool+conv figures: {POOL_CONV_REFERENCE_PARAMS / 1e6:.2f}M, "
                          f"{POOL_CONV_REFERENCE_FLOPS / 1e9:.2f}G")
    if throughput is not None:
        report.append("")
        report.append(f"CPU forward throughput: {throughput:.3f} images/s")
    return "\n".join(report)


def resolve_model_config(config_path: Optional[str] = None, preset: Optional[str] = None) -> FusionConfig:
    """The run config's model, or the full-scale preset when no file is given."""
    if config_path is not None:
        return RunConfig.load(config_path).model
    return FusionConfig.preset(preset or "paper")


def cost_comparison(config: FusionConfig, time_forward: bool = False,
                    repeats: int = 3) -> Tuple[CostSummary, CostSummary, Optional[float]]:
    """Costs of `config`, of the same model with the other resampling arm, and optional throughput."""
    other_mode = (ResampleMode.POOL_CONV if config.resample_mode == ResampleMode.REORGANIZE_GROUPCONV
                  else ResampleMode.REORGANIZE_GROUPCONV)
    alternative = summarize(FusionConfig.from_dict({**config.to_dict(), "resample_mode": other_mode.value}))
    throughput = measure_throughput(config, repeats) if time_forward else None
    return summarize(config), alternative, throughput


def model_info(config_path: Optional[str] = None, preset: Optional[str] = None, time_forward: bool = False,
               repeats: int = 3) -> str:
    """
    Report parameters, MACs and FLOPs for a model config against the reference band.

    Args:
        config_path: Optional run config; its `model` section is measured
        preset: Model preset when no config file is given (default 'paper')
        time_forward: Also measure CPU forward throughput
        repeats: Timed forward passes when time_forward is set

    Returns:
        String with the cost table and the comparison with the other
        resampling arm, or an error message
    """
    try:
        return format_cost_report(*cost_comparison(resolve_model_config(config_path, preset), time_forward, repeats))
    except FileNotFoundError as e:
        return f"Error: {e}"
    except FusionUNetError as e:
        return f"Error computing model cost: {e}"
