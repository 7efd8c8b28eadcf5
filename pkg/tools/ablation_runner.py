import csv
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from tools.trainer import DatasetSplits, prepare_splits, train
from utils.config import ABLATION_ARMS, RunConfig, TrainConfig
from utils.errors import FusionUNetError
from utils.file_handlers import write_json_file
from utils.fusion import FusionMode, ResampleMode
from utils.model import FusionConfig, build

logger = logging.getLogger(__name__)

ROW_LABELS = {
    "none": "No Fusion",
    "down_only": "Only Downward",
    "up_only": "Only Upward Fuse",
    "both": "DownFuse + UpFuse",
    "pool_conv": "Pooling+Conv",
    "reorganize_groupconv": "Reorganize+Group-Conv",
}
FUSION_ARMS = ("none", "down_only", "up_only", "both")
RESAMPLE_ARMS = ("pool_conv", "reorganize_groupconv")


def arm_settings(arm: str) -> Tuple[FusionMode, ResampleMode]:
    if arm in FUSION_ARMS:
        return FusionMode(arm), ResampleMode.REORGANIZE_GROUPCONV
    return FusionMode.BOTH, ResampleMode(arm)


def arm_seeds(base_seed: int, arm: str, repetitions: int) -> List[int]:
    """
    Training seeds for one arm.

    The master seed is split once per arm (by its fixed position in
    ABLATION_ARMS) and each arm's stream is split once per repetition, so
    no two arms share a seed even when they build the same model.
    """
    per_arm = np.random.SeedSequence(base_seed).spawn(len(ABLATION_ARMS))[ABLATION_ARMS.index(arm)]
    return [int(child.generate_state(1)[0]) for child in per_arm.spawn(repetitions)]


@dataclass
class AblationRow:
    arm: str
    label: str
    fusion_mode: str
    resample_mode: str
    seeds: List[int] = field(default_factory=list)
    dice: List[float] = field(default_factory=list)
    iou: List[float] = field(default_factory=list)
    params: int = 0

    @property
    def dice_mean(self) -> float:
        return float(np.mean(self.dice)) if self.dice else 0.0

    @property
    def dice_std(self) -> float:
        return float(np.std(self.dice)) if self.dice else 0.0

    @property
    def iou_mean(self) -> float:
        return float(np.mean(self.iou)) if self.iou else 0.0

    @property
    def iou_std(self) -> float:
        return float(np.std(self.iou)) if self.iou else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "arm": self.arm, "label": self.label, "fusion_mode": self.fusion_mode,
            "resample_mode": self.resample_mode, "seed_count": len(self.seeds), "seeds": self.seeds,
            "dice": self.dice, "iou": self.iou, "dice_mean": self.dice_mean, "dice_std": self.dice_std,
            "iou_mean": self.iou_mean, "iou_std": self.iou_std, "params": self.params,
        }


class AblationExecutor:
    """Trains every requested arm over several seeds on one shared dataset."""

    def __init__(self, run: RunConfig):
        self.run = run
        self._splits: Optional[DatasetSplits] = None

    @property
    def splits(self) -> DatasetSplits:
        if self._splits is None:
            self._splits = prepare_splits(self.run)
        return self._splits

    def _score(self, model_config: FusionConfig, seed: int) -> Tuple[float, float, int]:
        config = TrainConfig.from_dict({**self.run.train.to_dict(), "seed": seed})
        model = build(model_config, seed=seed)
        report = train(model, self.splits, config)
        if report.test_dice is not None:
            return report.test_dice, report.test_iou, report.params
        return report.best_val_dice, report.best_val_iou, report.params

    def run_arm(self, arm: str) -> AblationRow:
        fusion_mode, resample_mode = arm_settings(arm)
        model_config = FusionConfig.from_dict({**self.run.model.to_dict(), "fusion_mode": fusion_mode.value,
                                               "resample_mode": resample_mode.value})
        row = AblationRow(arm, ROW_LABELS[arm], fusion_mode.value, resample_mode.value)
        for i, seed in enumerate(arm_seeds(self.run.train.seed, arm, self.run.ablation.seeds)):
            logger.info("ablation %s: run %d/%d (seed %d)", row.label, i + 1, self.run.ablation.seeds, seed)
            dice, iou, row.params = self._score(model_config, seed)
            row.seeds.append(seed)
            row.dice.append(dice)
            row.iou.append(iou)
        return row

    def run_ablation(self, arms: Optional[Sequence[str]] = None) -> Dict[str, AblationRow]:
        """
        Run the requested arms (default: the config's list).

        Returns:
            Dict[str, AblationRow]: Rows keyed by arm name, in ABLATION_ARMS order
        """
        wanted = list(arms if arms is not None else self.run.ablation.arms)
        rows: Dict[str, AblationRow] = {}
        for arm in ABLATION_ARMS:
            if arm in wanted:
                rows[arm] = self.run_arm(arm)
        return rows

    def write(self, rows: Dict[str, AblationRow], out_dir: Union[str, Path]) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json_file(out / "ablation.json", {
            "config": self.run.to_dict(),
            "rows": [row.to_dict() for row in rows.values()],
        })
        with open(out / "ablation.csv", 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(["arm", "label", "seed_count", "dice_mean", "dice_std", "iou_mean", "iou_std", "params"])
            for row in rows.values():
                writer.writerow([row.arm, row.label, len(row.seeds), row.dice_mean, row.dice_std,
                                 row.iou_mean, row.iou_std, row.params])

    def generate_detailed_report(self, rows: Dict[str, AblationRow]) -> str:
        report = ["=" * 72, "ABLATION REPORT", "=" * 72, ""]
        report.append(f"Base width {self.run.model.base_width}, input side {self.run.model.input_side}, "
                      f"{self.run.train.epochs} epochs, {self.run.ablation.seeds} seed(s) per arm")
        for title, names in (("Fusion direction", FUSION_ARMS), ("Resampling", RESAMPLE_ARMS)):
            present = [rows[n] for n in names if n in rows]
            if not present:
                continue
            report.append("")
            report.append(f"{title}:")
            report.append(f"  {'arm':<24} {'Dice':>16} {'IoU':>16} {'seeds':>6} {'params':>12}")
            for row in present:
                report.append(
                    f"  {row.label:<24} {row.dice_mean:>8.4f} ± {row.dice_std:<5.4f} "
                    f"{row.iou_mean:>8.4f} ± {row.iou_std:<5.4f} {len(row.seeds):>6} {row.params:>12,}")

        if "both" in rows and "none" in rows:
            gain = rows["both"].dice_mean - rows["none"].dice_mean
            report.append("")
            report.append(f"DownFuse + UpFuse vs No Fusion: {gain * 100:+.2f} Dice points")
        if "pool_conv" in rows and "reorganize_groupconv" in rows:
            gap = rows["reorganize_groupconv"].dice_mean - rows["pool_conv"].dice_mean
            report.append(f"Reorganize+Group-Conv vs Pooling+Conv: {gap * 100:+.2f} Dice points")
        return "\n".join(report)


def run_ablation(base_config: RunConfig, arms: Optional[Sequence[str]] = None,
                 out_dir: Optional[Union[str, Path]] = None) -> Dict[str, AblationRow]:
    executor = AblationExecutor(base_config)
    rows = executor.run_ablation(arms)
    if out_dir is not None:
        executor.write(rows, out_dir)
    return rows


def run_ablation_study(config_path: Optional[str] = None, out_dir: str = "runs/ablation",
                       seed: Optional[int] = None) -> str:
    """
    Train every ablation arm over several seeds and return a comparison table.

    Args:
        config_path: Optional run config file (its `ablation` section picks arms and seed count)
        out_dir: Directory for ablation.json and ablation.csv
        seed: Overrides the master seed

    Returns:
        String with mean ± std Dice/IoU per arm, or an error message
    """
    try:
        run = RunConfig.load(config_path)
        if seed is not None:
            run = run.with_seed(seed)
        executor = AblationExecutor(run)
        rows = executor.run_ablation()
        executor.write(rows, out_dir)
        return executor.generate_detailed_report(rows)
    except FileNotFoundError as e:
        return f"Error: {e}"
    except FusionUNetError as e:
        return f"Error running ablation: {e}"
