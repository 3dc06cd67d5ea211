"""
Reusable trainable layers built on the primitives.
"""

import math
from typing import Tuple

import numpy as np

from apps.core import functional as F
from apps.core.mixins import Module
from apps.core.rng import Rng
from apps.core.tensor import Tensor


def he_normal(rng: Rng, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(shape, scale=math.sqrt(2.0 / fan_in))


def glorot_uniform(rng: Rng, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


class Linear(Module):
    """``x @ W (+ b)`` over the last axis."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_parameter(
            'weight', glorot_uniform(rng, (in_features, out_features), in_features, out_features)
        )
        self.bias = self.add_parameter('bias', np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = F.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    """Layer normalization over the last axis with per-feature affine."""

    def __init__(self, features: int):
        super().__init__()
        self.gamma = self.add_parameter('gamma', np.ones(features))
        self.beta = self.add_parameter('beta', np.zeros(features))

    def forward(self, x: Tensor) -> Tensor:
        return F.layernorm(x, axes=(-1,)) * self.gamma + self.beta


class Conv3d(Module):
    """Channels-last 3-D convolution with bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: Rng,
        kernel_size: int = 3,
        stride: int = 1,
    ):
        super().__init__()
        self.stride = stride
        self.padding = kernel_size // 2
        fan_in = in_channels * kernel_size ** 3
        self.weight = self.add_parameter(
            'weight',
            he_normal(rng, (kernel_size,) * 3 + (in_channels, out_channels), fan_in),
        )
        self.bias = self.add_parameter('bias', np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.weight, stride=self.stride, padding=self.padding) + self.bias
