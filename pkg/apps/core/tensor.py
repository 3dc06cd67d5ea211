"""
Dense tensors with reverse-mode automatic differentiation.

Demonstrates:
- A tape of primitive applications recorded at forward time
- Reverse replay in creation order with gradient accumulation
- A context-variable switch for tape-free inference
"""

import weakref
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from itertools import count
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from apps.core.exceptions import GradientError, PrimitiveAttributeError, ShapeError
from apps.core.primitives import Primitive, get_primitive

ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence]

_grad_enabled: ContextVar[bool] = ContextVar('masm_grad_enabled', default=True)
_node_ids = count()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run the enclosed block without recording tape nodes."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@dataclass(eq=False)
class TapeNode:
    """One recorded primitive application."""

    index: int
    primitive_id: str
    inputs: Tuple['Tensor', ...]
    attrs: Dict[str, Any]
    saved: Any
    output_ref: Any = field(repr=False, default=None)

    @property
    def primitive(self) -> Primitive:
        # Looked up at replay time so a swapped backward rule takes effect.
        return get_primitive(self.primitive_id)


class GradTape:
    """
    Ordered view of the nodes reachable from an output tensor.

    Nodes are sorted by creation index, so reversing the list replays the
    computation backward with every node visited exactly once.
    """

    def __init__(self, nodes: List[TapeNode]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: 'Tensor') -> 'GradTape':
        seen: Dict[int, TapeNode] = {}
        stack = [output._node] if output._node is not None else []
        while stack:
            node = stack.pop()
            if node.index in seen:
                continue
            seen[node.index] = node
            for tensor in node.inputs:
                if tensor._node is not None and tensor._node.index not in seen:
                    stack.append(tensor._node)
        return cls([seen[i] for i in sorted(seen)])

    def __len__(self) -> int:
        return len(self.nodes)

    def replay_order(self) -> List[TapeNode]:
        return list(reversed(self.nodes))


class Tensor:
    """
    n-dimensional float64 array with optional tape linkage.

    Tensors are immutable after creation except for ``grad``, which only
    backward() writes.
    """

    __slots__ = ('data', 'requires_grad', 'grad', 'name', '_node', '__weakref__')

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64, order='C')
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[TapeNode] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError('item', [self.shape], 'tensor is not a scalar')
        return float(self.data.reshape(()))

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar

    def __add__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('add', [self, as_tensor(other)], {})

    def __radd__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('add', [as_tensor(other), self], {})

    def __sub__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('sub', [self, as_tensor(other)], {})

    def __rsub__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('sub', [as_tensor(other), self], {})

    def __mul__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('mul', [self, as_tensor(other)], {})

    def __rmul__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('mul', [as_tensor(other), self], {})

    def __truediv__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('div', [self, as_tensor(other)], {})

    def __rtruediv__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('div', [as_tensor(other), self], {})

    def __neg__(self) -> 'Tensor':
        return primitive_forward('mul', [self, as_tensor(-1.0)], {})

    def __matmul__(self, other: ArrayLike) -> 'Tensor':
        return primitive_forward('matmul', [self, as_tensor(other)], {})


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def primitive_forward(op: str, inputs: Sequence[Tensor], attrs: Dict[str, Any]) -> Tensor:
    """
    Apply a registered primitive and record it on the tape when any input
    requires a gradient.
    """
    primitive = get_primitive(op)
    missing = set(primitive.required_attrs) - set(attrs)
    if missing:
        raise PrimitiveAttributeError(op, missing)
    if primitive.arity is not None and len(inputs) != primitive.arity:
        raise ShapeError(op, [t.shape for t in inputs], f'expected {primitive.arity} inputs')
    primitive.validate([t.shape for t in inputs], attrs)

    data, saved = primitive.forward([t.data for t in inputs], attrs)
    tracked = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked)
    if tracked:
        out._node = TapeNode(
            index=next(_node_ids),
            primitive_id=op,
            inputs=tuple(inputs),
            attrs=attrs,
            saved=saved,
            output_ref=weakref.ref(out),
        )
    return out


def backward(output: Tensor) -> None:
    """
    Populate ``grad`` on every requires_grad tensor reachable from a scalar.

    Leaf gradients accumulate across calls; callers zero them between steps.
    """
    if output.size != 1:
        raise GradientError(f"backward needs a scalar output, got shape {output.shape}")
    if output._node is None:
        raise GradientError("backward called on a tensor that was not produced through the tape")

    tape = GradTape.from_output(output)
    pending: Dict[int, np.ndarray] = {output._node.index: np.ones_like(output.data)}

    for node in tape.replay_order():
        grad = pending.pop(node.index, None)
        if grad is None:
            continue
        produced = node.output_ref()
        if produced is None:
            raise GradientError(f"output of node {node.index} ({node.primitive_id}) was released")
        produced.grad = grad
        input_grads = node.primitive.backward(
            grad, [t.data for t in node.inputs], produced.data, node.saved, node.attrs
        )
        for tensor, input_grad in zip(node.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            if tensor._node is None:
                tensor.grad = input_grad.copy() if tensor.grad is None else tensor.grad + input_grad
            elif tensor._node.index in pending:
                pending[tensor._node.index] = pending[tensor._node.index] + input_grad
            else:
                pending[tensor._node.index] = input_grad
