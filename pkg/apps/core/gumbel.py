"""
Gumbel-Softmax sampling with a straight-through hard variant.
"""

import numpy as np

from apps.core import functional as F
from apps.core.exceptions import SamplingError
from apps.core.rng import Rng
from apps.core.tensor import Tensor


def gumbel_noise(shape, rng: Rng) -> np.ndarray:
    """g = -log(-log(u)) with u drawn on the open unit interval."""
    return -np.log(-np.log(rng.open_uniform(shape)))


def gumbel_softmax(logits: Tensor, tau: float, hard: bool, rng: Rng) -> Tensor:
    """
    Draw a relaxed categorical sample per row of ``logits``.

    With ``hard`` the forward value is the one-hot argmax of the relaxed
    sample while gradients flow through the relaxed sample itself.
    """
    if not tau > 0:
        raise SamplingError(f"temperature must be positive, got {tau}")
    if not np.all(np.isfinite(logits.data)):
        raise SamplingError("logits contain non-finite values")

    noise = gumbel_noise(logits.shape, rng)
    soft = F.softmax((logits + noise) * (1.0 / tau))
    if not hard:
        return soft

    winners = soft.data.argmax(axis=-1)
    one_hot = np.zeros(soft.shape)
    np.put_along_axis(one_hot, winners[..., None], 1.0, axis=-1)
    return F.straight_through(one_hot, soft)
