"""
Central finite-difference checks for the backward rules.
"""

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, Mapping, Optional

import numpy as np

from apps.core.primitives import Primitive, get_primitive, replace_primitive
from apps.core.rng import Rng
from apps.core.tensor import Tensor, no_grad

DEFAULT_STEP = 1e-4
DEFAULT_TOLERANCE = 1e-3
# Below this magnitude gradients are compared in absolute terms.
GRADIENT_FLOOR = 1e-4


@dataclass
class GradCheckResult:
    """Worst disagreement found for one tensor."""

    name: str
    worst_error: float
    analytic: float
    numeric: float
    entries_checked: int

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.worst_error < tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRADIENT_FLOOR)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    step: float = DEFAULT_STEP,
    max_entries: Optional[int] = None,
    rng: Optional[Rng] = None,
) -> Dict[str, GradCheckResult]:
    """
    Compare backward gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must be deterministic: it is evaluated twice per checked entry.
    When ``max_entries`` is set, at most that many entries per tensor are
    checked, chosen with ``rng``.
    """
    for tensor in tensors.values():
        tensor.zero_grad()
    loss_fn().backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros(t.shape))
        for name, t in tensors.items()
    }

    rng = rng or Rng(0)
    results = {}
    for name, tensor in tensors.items():
        flat = tensor.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            picks = np.sort(rng.integers(0, flat.size, max_entries))
        else:
            picks = np.arange(flat.size)

        worst = GradCheckResult(name, 0.0, 0.0, 0.0, len(picks))
        for position in picks:
            original = flat[position]
            with no_grad():
                flat[position] = original + step
                upper = loss_fn().item()
                flat[position] = original - step
                lower = loss_fn().item()
            flat[position] = original
            numeric = (upper - lower) / (2.0 * step)
            exact = float(analytic[name].reshape(-1)[position])
            error = relative_error(exact, numeric)
            if error >= worst.worst_error:
                worst = GradCheckResult(name, error, exact, numeric, len(picks))
        results[name] = worst
    return results


class CorruptedPrimitive(Primitive):
    """Wraps a primitive and scales its input gradients by a wrong factor."""

    def __init__(self, inner: Primitive, factor: float = 1.5):
        self.inner = inner
        self.factor = factor
        self.name = inner.name
        self.arity = inner.arity
        self.required_attrs = inner.required_attrs

    def validate(self, shapes, attrs):
        self.inner.validate(shapes, attrs)

    def forward(self, xs, attrs):
        return self.inner.forward(xs, attrs)

    def backward(self, grad, xs, out, saved, attrs):
        return [
            None if g is None else g * self.factor
            for g in self.inner.backward(grad, xs, out, saved, attrs)
        ]


@contextmanager
def corrupted_backward(primitive_id: str, factor: float = 1.5) -> Iterator[None]:
    """Temporarily install a wrong backward rule for one primitive."""
    original = get_primitive(primitive_id)
    replace_primitive(primitive_id, CorruptedPrimitive(original, factor))
    try:
        yield
    finally:
        replace_primitive(primitive_id, original)
