import unittest

import numpy as np
from numpy.testing import assert_allclose

from utils.errors import ConfigError, LabelRangeError, ShapeError
from utils.losses import ce_loss, combined_loss, dice_loss, focal_loss, get_loss, one_hot
from utils.metrics import dice_metric, iou_metric, per_class_scores
from utils.tensor import Tensor


def _confident(mask, n_classes, scale=30.0):
    return Tensor(scale * (2.0 * one_hot(mask, n_classes) - 1.0))


class TestLosses(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.mask = self.rng.integers(0, 3, size=(2, 5, 5))

    def test_uniform_logits_give_log_k(self):
        self.assertAlmostEqual(ce_loss(Tensor(np.zeros((2, 3, 5, 5))), self.mask).item(), np.log(3.0))

    def test_confident_correct_prediction_is_near_zero(self):
        logits = _confident(self.mask, 3)
        self.assertLess(ce_loss(logits, self.mask).item(), 1e-10)
        self.assertLess(dice_loss(logits, self.mask).item(), 1e-6)
        self.assertLess(focal_loss(logits, self.mask).item(), 1e-10)

    def test_focal_with_zero_gamma_is_cross_entropy(self):
        logits = Tensor(self.rng.normal(size=(2, 3, 5, 5)))
        self.assertAlmostEqual(focal_loss(logits, self.mask, gamma=0).item(), ce_loss(logits, self.mask).item())

    def test_focal_down_weights_easy_pixels(self):
        logits = Tensor(self.rng.normal(size=(2, 3, 5, 5)))
        self.assertLess(focal_loss(logits, self.mask).item(), ce_loss(logits, self.mask).item())

    def test_focal_gamma_range(self):
        with self.assertRaises(ConfigError):
            focal_loss(Tensor(np.zeros((2, 3, 5, 5))), self.mask, gamma=0.5)

    def test_combined_is_the_sum(self):
        logits = Tensor(self.rng.normal(size=(2, 3, 5, 5)))
        expected = ce_loss(logits, self.mask).item() + dice_loss(logits, self.mask).item()
        self.assertAlmostEqual(combined_loss(logits, self.mask).item(), expected)

    def test_dice_loss_is_bounded(self):
        for _ in range(5):
            value = dice_loss(Tensor(self.rng.normal(size=(2, 3, 5, 5)) * 5), self.mask).item()
            self.assertTrue(0.0 <= value <= 1.0)

    def test_dice_loss_moves_against_dice_metric(self):
        mask = np.zeros((1, 8, 8), dtype=np.int64)
        mask[:, :, :4] = 1
        order = np.random.default_rng(5).permutation(mask.size)
        losses, scores = [], []
        for flips in range(0, 25, 4):
            pred = mask.copy().reshape(-1)
            pred[order[:flips]] = 1 - pred[order[:flips]]
            pred = pred.reshape(mask.shape)
            losses.append(dice_loss(_confident(pred, 2), mask).item())
            scores.append(dice_metric(pred, mask))
        self.assertTrue(np.all(np.diff(losses) > 0))
        self.assertTrue(np.all(np.diff(scores) < 0))

    def test_label_and_shape_checks(self):
        with self.assertRaises(LabelRangeError):
            ce_loss(Tensor(np.zeros((2, 2, 5, 5))), self.mask)
        with self.assertRaises(ShapeError):
            ce_loss(Tensor(np.zeros((2, 3, 4, 4))), self.mask)

    def test_registry(self):
        self.assertIs(get_loss("dice"), dice_loss)
        with self.assertRaises(ConfigError):
            get_loss("hinge")


class TestMetrics(unittest.TestCase):
    def test_known_overlap(self):
        pred = np.array([[1, 1, 0, 0]])
        mask = np.array([[1, 0, 0, 0]])
        self.assertAlmostEqual(dice_metric(pred, mask), 2.0 / 3.0)
        self.assertAlmostEqual(iou_metric(pred, mask), 0.5)

    def test_empty_masks_score_one(self):
        empty = np.zeros((4, 4), dtype=np.int64)
        self.assertEqual(dice_metric(empty, empty), 1.0)
        self.assertEqual(iou_metric(empty, empty), 1.0)

    def test_disjoint_masks_score_zero(self):
        pred = np.zeros((4, 4), dtype=np.int64)
        mask = np.ones((4, 4), dtype=np.int64)
        self.assertEqual(dice_metric(pred, mask), 0.0)
        self.assertEqual(iou_metric(pred, mask), 0.0)

    def test_iou_follows_from_dice_for_binary_masks(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            density = rng.uniform(0.0, 0.6, size=2)
            pred = (rng.random((6, 6)) < density[0]).astype(np.int64)
            mask = (rng.random((6, 6)) < density[1]).astype(np.int64)
            dice, iou = dice_metric(pred, mask), iou_metric(pred, mask)
            self.assertAlmostEqual(iou, dice / (2.0 - dice), places=12)

    def test_multiclass_averages_present_foreground(self):
        pred = np.array([[1, 1, 2, 0]])
        mask = np.array([[1, 1, 0, 0]])
        dice, _ = per_class_scores(pred, mask, n_classes=4)
        assert_allclose(dice[1:], [1.0, 0.0, 1.0])
        # class 3 is absent from both and excluded
        self.assertAlmostEqual(dice_metric(pred, mask, n_classes=4), 0.5)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            dice_metric(np.zeros((2, 2)), np.zeros((2, 3)))


if __name__ == '__main__':
    unittest.main()
