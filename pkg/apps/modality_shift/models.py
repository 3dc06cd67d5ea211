"""
Trainable state of the Modality-Shift module.
"""

import math

import numpy as np

from apps.core import functional as F
from apps.core.exceptions import ShapeError
from apps.core.layers import LayerNorm, glorot_uniform
from apps.core.mixins import Module
from apps.core.rng import Rng
from apps.core.tensor import Tensor

DEFAULT_HEADS = 4


class MultiHeadAttention(Module):
    """
    ``[Att_1(x), ..., Att_n(x)] W^O`` with per-head projections of width d/n.

    The per-head W_i^Q (d x d/n) are stored side by side as one d x d matrix;
    head i owns columns i*d/n .. (i+1)*d/n.
    """

    def __init__(self, width: int, heads: int, rng: Rng):
        super().__init__()
        if heads < 1 or width % heads:
            raise ShapeError('MultiHeadAttention', [(width,), (heads,)], 'width not divisible by heads')
        self.width = width
        self.heads = heads
        self.head_width = width // heads
        self.query = self.add_parameter('query', glorot_uniform(rng, (width, width), width, self.head_width))
        self.key = self.add_parameter('key', glorot_uniform(rng, (width, width), width, self.head_width))
        self.value = self.add_parameter('value', glorot_uniform(rng, (width, width), width, self.head_width))
        self.output = self.add_parameter('output', glorot_uniform(rng, (width, width), width, width))

    def _split(self, x: Tensor) -> Tensor:
        """(..., seq, d) -> (..., n, seq, d/n)."""
        lead = x.shape[:-1]
        split = F.reshape(x, lead + (self.heads, self.head_width))
        axes = list(range(len(lead) - 1)) + [len(lead), len(lead) - 1, len(lead) + 1]
        return F.transpose(split, axes)

    def _merge(self, x: Tensor) -> Tensor:
        """(..., n, seq, d/n) -> (..., seq, d)."""
        nd = x.ndim
        axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
        merged = F.transpose(x, axes)
        return F.reshape(merged, merged.shape[:-2] + (self.width,))

    def forward(self, x: Tensor) -> Tensor:
        q = self._split(F.matmul(x, self.query))
        k = self._split(F.matmul(x, self.key))
        v = self._split(F.matmul(x, self.value))
        scores = F.matmul(q, F.swap_last(k)) * (1.0 / math.sqrt(self.head_width))
        heads = F.matmul(F.softmax(scores), v)
        return F.matmul(self._merge(heads), self.output)


class MHABlock(Module):
    """Pre-norm residual attention: ``x + MHA(LN(x))``."""

    def __init__(self, width: int, heads: int, rng: Rng):
        super().__init__()
        self.norm = self.add_module('norm', LayerNorm(width))
        self.attention = self.add_module('attention', MultiHeadAttention(width, heads, rng))

    def forward(self, x: Tensor) -> Tensor:
        return x + self.attention(self.norm(x))


class ModalityShiftFusion(Module):
    """Spatial and modality attention blocks of one layer."""

    def __init__(self, width: int, heads: int, rng: Rng, mosaic: bool = True):
        super().__init__()
        self.width = width
        self.mosaic = mosaic
        self.spatial = self.add_module('spatial', MHABlock(width, heads, rng))
        self.modality = self.add_module('modality', MHABlock(width, heads, rng))

    def silence(self) -> None:
        """Zero both output projections so each block is the identity."""
        for block in (self.spatial, self.modality):
            block.attention.output.data = np.zeros_like(block.attention.output.data)
