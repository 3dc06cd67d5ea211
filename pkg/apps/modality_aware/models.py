"""
Trainable state of the Modality-Aware module.

Features:
- Token mask predictor (local MLP, average-pooled global context, decision MLP)
- Paired-modality single-head self-attention with a 4x feed-forward
- Binary decision masks
"""

import math
from dataclasses import dataclass

import numpy as np

from apps.core import functional as F
from apps.core.exceptions import ShapeError
from apps.core.layers import Linear, glorot_uniform
from apps.core.mixins import Module
from apps.core.rng import Rng
from apps.core.tensor import Tensor


@dataclass
class DecisionMask:
    """
    Per-token keep/prune decision for one modality.

    ``values`` holds 1 for kept tokens and 0 for pruned ones. In training the
    tensor carries the straight-through gradient of the Gumbel sample.
    """

    values: Tensor

    @classmethod
    def from_bits(cls, bits) -> 'DecisionMask':
        return cls(Tensor(np.asarray(bits, dtype=np.float64)))

    def __len__(self) -> int:
        return self.values.shape[-1]

    @property
    def keep(self) -> np.ndarray:
        return self.values.data > 0.5

    @property
    def keep_ratio(self) -> float:
        return float(self.keep.mean()) if len(self) else 0.0

    def is_binary(self) -> bool:
        return bool(np.all((self.values.data == 0.0) | (self.values.data == 1.0)))

    def column(self) -> Tensor:
        """The mask shaped (N, 1) for row-wise products."""
        return F.reshape(self.values, self.values.shape + (1,))


class MaskPredictor(Module):
    """
    Predicts keep/prune probabilities for every token of a modality.

    Local features come from a per-token MLP of width C' = d / 2; the global
    feature is their average over tokens, broadcast back and concatenated.
    """

    def __init__(self, width: int, rng: Rng):
        super().__init__()
        if width < 2 or width % 2:
            raise ShapeError('MaskPredictor', [(width,)], 'token width must be even')
        self.width = width
        self.hidden = width // 2
        self.local = self.add_module('local', Linear(width, self.hidden, rng))
        self.decision_hidden = self.add_module('decision_hidden', Linear(2 * self.hidden, self.hidden, rng))
        self.decision_out = self.add_module('decision_out', Linear(self.hidden, 2, rng))

    def local_features(self, feat: Tensor) -> Tensor:
        return F.relu(self.local(feat))

    def global_features(self, local: Tensor) -> Tensor:
        return F.avg_pool(local, axes=(-2,), keepdims=True)

    def forward(self, feat: Tensor) -> Tensor:
        """Decision logits of shape (..., N, 2)."""
        local = self.local_features(feat)
        spread = F.mul(self.global_features(local), np.ones(local.shape[:-1] + (1,)))
        joined = F.concat([local, spread], axis=-1)
        return self.decision_out(F.relu(self.decision_hidden(joined)))


class PairAttention(Module):
    """
    Single-head self-attention over a two-token modality sequence followed by
    the feed-forward ``max(0, x W0 + b0) W1 + b1`` with hidden width 4d.
    """

    def __init__(self, width: int, rng: Rng):
        super().__init__()
        self.width = width
        self.query = self.add_parameter('query', glorot_uniform(rng, (width, width), width, width))
        self.key = self.add_parameter('key', glorot_uniform(rng, (width, width), width, width))
        self.value = self.add_parameter('value', glorot_uniform(rng, (width, width), width, width))
        self.ffn_in = self.add_module('ffn_in', Linear(width, 4 * width, rng))
        self.ffn_out = self.add_module('ffn_out', Linear(4 * width, width, rng))

    def attention(self, z: Tensor) -> Tensor:
        """Softmax(Q K^T / sqrt(d)) V for sequences z of shape (..., 2, d)."""
        q = F.matmul(z, self.query)
        k = F.matmul(z, self.key)
        v = F.matmul(z, self.value)
        scores = F.matmul(q, F.swap_last(k)) * (1.0 / math.sqrt(self.width))
        return F.matmul(F.softmax(scores), v)

    def feed_forward(self, x: Tensor) -> Tensor:
        return self.ffn_out(F.relu(self.ffn_in(x)))

    def forward(self, z: Tensor) -> Tensor:
        return self.feed_forward(self.attention(z))


class ModalityAwareFusion(Module):
    """Mask predictor and the two pair-attention blocks of one layer."""

    def __init__(self, width: int, rng: Rng):
        super().__init__()
        self.width = width
        self.predictor = self.add_module('predictor', MaskPredictor(width, rng))
        self.pair_t2_flair = self.add_module('pair_t2_flair', PairAttention(width, rng))
        self.pair_t1_t1ce = self.add_module('pair_t1_t1ce', PairAttention(width, rng))

    def pair_state(self, pair_index: int) -> PairAttention:
        return (self.pair_t2_flair, self.pair_t1_t1ce)[pair_index]
