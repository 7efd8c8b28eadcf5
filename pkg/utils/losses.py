from typing import Callable, Dict

import numpy as np

from . import functional as F
from .errors import ConfigError, LabelRangeError, ShapeError
from .tensor import Tensor

DICE_SMOOTH = 1e-5

LossFn = Callable[[Tensor, np.ndarray], Tensor]


def one_hot(mask: np.ndarray, n_classes: int, dtype=np.float64) -> np.ndarray:
    """N×H×W labels to an N×K×H×W indicator array."""
    return np.moveaxis(np.eye(n_classes, dtype=dtype)[mask], -1, 1)


def _check(logits: Tensor, mask: np.ndarray) -> np.ndarray:
    if logits.ndim != 4 or mask.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeError(f"logits {logits.shape} and mask {mask.shape} do not match")
    n_classes = logits.shape[1]
    if mask.size and (mask.min() < 0 or mask.max() >= n_classes):
        raise LabelRangeError(f"mask labels span [{mask.min()}, {mask.max()}], outside [0, {n_classes})")
    return one_hot(mask.astype(np.int64), n_classes, logits.dtype)


def ce_loss(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Mean per-pixel cross entropy over log-softmax probabilities."""
    target = Tensor(_check(logits, mask))
    return -(F.log_softmax_channels(logits) * target).sum(axis=1).mean()


def dice_loss(logits: Tensor, mask: np.ndarray) -> Tensor:
    """
    1 − soft Dice of the softmax probabilities, averaged over classes.

    Each class's score is (2·Σp·y + ε) / (Σp + Σy + ε) over the whole batch.
    """
    target = _check(logits, mask)
    probs = F.softmax_channels(logits)
    axes = (0, 2, 3)
    intersection = (probs * Tensor(target)).sum(axis=axes)
    denominator = probs.sum(axis=axes) + Tensor(target.sum(axis=axes) + DICE_SMOOTH)
    return 1.0 - ((2.0 * intersection + DICE_SMOOTH) / denominator).mean()


def focal_loss(logits: Tensor, mask: np.ndarray, gamma: float = 2.0) -> Tensor:
    """
    Cross entropy with each pixel weighted by (1 − p_t)^gamma.

    Raises:
        ConfigError: If gamma is neither 0 nor ≥ 1
    """
    if gamma != 0 and gamma < 1:
        raise ConfigError(f"focal gamma must be 0 or ≥ 1, got {gamma}")
    target = Tensor(_check(logits, mask))
    log_pt = (F.log_softmax_channels(logits) * target).sum(axis=1)
    if gamma == 0:
        return -log_pt.mean()
    weight = (1.0 - log_pt.exp()) ** gamma
    return -(weight * log_pt).mean()


def combined_loss(logits: Tensor, mask: np.ndarray) -> Tensor:
    return ce_loss(logits, mask) + dice_loss(logits, mask)


LOSSES: Dict[str, LossFn] = {
    "ce": ce_loss,
    "dice": dice_loss,
    "focal": focal_loss,
    "combined": combined_loss,
}


def get_loss(name: str) -> LossFn:
    if name not in LOSSES:
        raise ConfigError(f"Unknown loss '{name}'. Available: {list(LOSSES)}")
    return LOSSES[name]
