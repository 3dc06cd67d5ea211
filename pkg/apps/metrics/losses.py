"""
Soft Dice training loss.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from apps.core import functional as F
from apps.core.exceptions import ShapeError
from apps.core.tensor import Tensor

DICE_SMOOTHING = 1e-5


@dataclass
class LossReport:
    """
    Loss tensor for backward plus its scalar summary.

    total = 1 - mean(per_class)
    """

    loss: Tensor
    total: float
    per_class: Tuple[float, ...]


def soft_dice_loss(probabilities: Tensor, target: np.ndarray, eps: float = DICE_SMOOTHING) -> LossReport:
    """
    Per class j: (2 sum G P + eps) / (sum G^2 + sum P^2 + eps); the loss is
    one minus the class mean. Classes live on the last axis.

    Raises:
        ShapeError: when prediction and target shapes differ
    """
    target = np.asarray(target, dtype=np.float64)
    if probabilities.shape != target.shape:
        raise ShapeError('soft_dice_loss', [probabilities.shape, target.shape], 'prediction and target differ')
    axes = tuple(range(probabilities.ndim - 1))
    overlap = F.sum(probabilities * target, axes=axes)
    predicted = F.sum(probabilities * probabilities, axes=axes)
    reference = (target * target).sum(axis=axes)

    dice = (2.0 * overlap + eps) / (predicted + reference + eps)
    classes = probabilities.shape[-1]
    loss = 1.0 - F.sum(dice) * (1.0 / classes)
    return LossReport(loss=loss, total=loss.item(), per_class=tuple(float(v) for v in dice.data))
