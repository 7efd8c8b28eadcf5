"""
End-to-end learning checks at desk scale. They train for minutes, so they
only run with FUSION_UNET_SLOW=1.
"""
import os
import unittest
from unittest import mock

import numpy as np
import pytest

from tools.ablation_runner import run_ablation
from tools.trainer import train_from_config
from utils.config import RunConfig

SLOW = os.getenv("FUSION_UNET_SLOW", "0") == "1"

DESK = {
    "model": {"preset": "desk"},
    "train": {"epochs": 30, "batch_size": 4, "lr": 1e-3, "T_0": 10.0},
    "data": {"style": "nuclei", "side": 64, "n_train": 200, "n_val": 50, "n_test": 0},
}


@pytest.mark.slow
@unittest.skipUnless(SLOW, "set FUSION_UNET_SLOW=1 to run desk-scale training")
@mock.patch.dict(os.environ, {"FUSION_UNET_PROGRESS": "0"})
class TestDeskScaleLearning(unittest.TestCase):
    def test_validation_dice_floor(self):
        _, report = train_from_config(RunConfig.from_dict(DESK))
        self.assertGreaterEqual(report.best_val_dice, 0.85)
        early = [row["train_loss"] for row in report.epochs[:5]]
        self.assertLess(np.mean(np.diff(early)), 0.0)

    def test_fusion_and_resampling_ordering(self):
        run = RunConfig.from_dict({**DESK,
                                   "ablation": {"seeds": 5, "arms": ["none", "both", "pool_conv",
                                                                     "reorganize_groupconv"]}})
        rows = run_ablation(run)
        self.assertGreaterEqual(rows["both"].dice_mean - rows["none"].dice_mean, 0.005)
        self.assertGreaterEqual(rows["reorganize_groupconv"].dice_mean, rows["pool_conv"].dice_mean)


if __name__ == '__main__':
    unittest.main()
