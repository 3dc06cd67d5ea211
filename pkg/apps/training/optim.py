"""
Adam optimizer and the warmup + cosine learning-rate schedule.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from apps.core.tensor import Tensor


@dataclass(frozen=True)
class WarmupCosine:
    """
    Linear warmup to ``base_lr`` over ``warmup_steps``, then cosine decay to
    ``floor * base_lr`` at ``total_steps``. Steps are 1-based.
    """

    base_lr: float
    warmup_steps: int
    total_steps: int
    floor: float = 0.0

    def __call__(self, step: int) -> float:
        if self.warmup_steps and step <= self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        decay_steps = self.total_steps - self.warmup_steps
        if decay_steps <= 0:
            return self.base_lr
        progress = min(max((step - self.warmup_steps) / decay_steps, 0.0), 1.0)
        low = self.floor * self.base_lr
        return low + 0.5 * (self.base_lr - low) * (1.0 + math.cos(math.pi * progress))


class Adam:
    """First/second-moment optimizer with bias correction."""

    def __init__(
        self,
        params: Sequence[Tensor],
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params: List[Tensor] = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def first_non_finite(named: Sequence[Tuple[str, Tensor]], check_grads: bool = True) -> Optional[str]:
    """Name of the first parameter whose value or gradient is not finite."""
    for name, tensor in named:
        if not np.all(np.isfinite(tensor.data)):
            return name
        if check_grads and tensor.grad is not None and not np.all(np.isfinite(tensor.grad)):
            return name
    return None
