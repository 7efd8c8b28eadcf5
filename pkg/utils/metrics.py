"""
Region-overlap metrics on integer label masks.

Scores are computed per class, then averaged over the foreground classes
present in either mask. A class empty in both masks scores 1.0, and so does
a pair of masks with no foreground at all.
"""
from typing import Optional, Tuple

import numpy as np

from .errors import ShapeError


def _n_classes(pred: np.ndarray, mask: np.ndarray, n_classes: Optional[int]) -> int:
    if pred.shape != mask.shape:
        raise ShapeError(f"prediction {pred.shape} and mask {mask.shape} differ in shape")
    if n_classes is not None:
        return n_classes
    top = max(int(pred.max()) if pred.size else 0, int(mask.max()) if mask.size else 0)
    return max(top + 1, 2)


def per_class_scores(pred: np.ndarray, mask: np.ndarray,
                     n_classes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Dice and IoU for every label 0..K−1.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (dice, iou), each of length K
    """
    k = _n_classes(pred, mask, n_classes)
    labels = np.arange(k).reshape(-1, *([1] * pred.ndim))
    in_pred = pred[None] == labels
    in_mask = mask[None] == labels
    axes = tuple(range(1, pred.ndim + 1))
    intersection = (in_pred & in_mask).sum(axis=axes).astype(np.float64)
    total = in_pred.sum(axis=axes) + in_mask.sum(axis=axes)
    union = total - intersection

    empty = total == 0
    safe_total = np.where(empty, 1, total)
    safe_union = np.where(empty, 1, union)
    dice = np.where(empty, 1.0, 2.0 * intersection / safe_total)
    iou = np.where(empty, 1.0, intersection / safe_union)
    return dice, iou


def _foreground_mean(scores: np.ndarray, pred: np.ndarray, mask: np.ndarray) -> float:
    present = [c for c in range(1, len(scores)) if np.any(pred == c) or np.any(mask == c)]
    if not present:
        return 1.0
    return float(np.mean(scores[present]))


def dice_metric(pred: np.ndarray, mask: np.ndarray, n_classes: Optional[int] = None) -> float:
    """2|A∩B| / (|A| + |B|), averaged over present foreground classes."""
    dice, _ = per_class_scores(pred, mask, n_classes)
    return _foreground_mean(dice, pred, mask)


def iou_metric(pred: np.ndarray, mask: np.ndarray, n_classes: Optional[int] = None) -> float:
    """|A∩B| / |A∪B|, averaged over present foreground classes."""
    _, iou = per_class_scores(pred, mask, n_classes)
    return _foreground_mean(iou, pred, mask)
