import logging
import os
import sys
from pathlib import Path
from typing import Optional, Union

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from utils.config import RunConfig
from utils.data import SynthSpec, generate_dataset, save_dataset
from utils.errors import FusionUNetError

logger = logging.getLogger(__name__)


def build_dataset(spec: SynthSpec, count: int, out_dir: Union[str, Path]) -> Path:
    """
    Generate `count` synthetic samples and write them as a dataset directory.

    Returns:
        Path: The manifest written alongside the images and masks
    """
    samples = generate_dataset(spec, count)
    manifest = save_dataset(samples, out_dir, spec)
    foreground = float(np.mean([(s.mask > 0).mean() for s in samples])) if samples else 0.0
    logger.info("generated %d %s samples (side %d, %.1f%% foreground)", count, spec.style.value, spec.side,
                100 * foreground)
    return manifest


def generate_data(config_path: Optional[str] = None, out_dir: str = "data/synthetic",
                  count: Optional[int] = None, seed: Optional[int] = None) -> str:
    """
    Write a synthetic segmentation dataset described by a run config.

    Args:
        config_path: Optional run config; its `data` section sets style, size and noise
        out_dir: Target directory for images/, masks/ and manifest.json
        count: Number of samples (default: n_train + n_val + n_test)
        seed: Overrides the data seed

    Returns:
        String describing what was written, or an error message
    """
    try:
        run = RunConfig.load(config_path)
        if seed is not None:
            run = run.with_seed(seed)
        data = run.data
        total = count if count is not None else data.n_train + data.n_val + data.n_test
        if total < 1:
            return f"Error: sample count must be positive, got {total}"
        manifest = build_dataset(data.synth, total, out_dir)
        return (f"Wrote {total} {data.synth.style.value} samples "
                f"({data.synth.in_channels}×{data.synth.side}×{data.synth.side}, "
                f"{data.synth.n_classes} classes, seed {data.synth.seed}) to {out_dir}\n"
                f"Manifest: {manifest}")
    except FileNotFoundError as e:
        return f"Error: {e}"
    except FusionUNetError as e:
        return f"Error generating data: {e}"
