"""
Functional wrappers over the registered primitives.

These are the calls the model code composes; each one is a single
primitive_forward with its attribute map spelled out.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from apps.core.tensor import ArrayLike, Tensor, as_tensor, primitive_forward

Axes = Optional[Union[int, Tuple[int, ...]]]

LAYERNORM_EPS = 1e-5


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward('add', [as_tensor(a), as_tensor(b)], {})


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward('sub', [as_tensor(a), as_tensor(b)], {})


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward('mul', [as_tensor(a), as_tensor(b)], {})


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward('div', [as_tensor(a), as_tensor(b)], {})


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return primitive_forward('matmul', [as_tensor(a), as_tensor(b)], {})


def relu(x: Tensor) -> Tensor:
    return primitive_forward('relu', [x], {})


def sigmoid(x: Tensor) -> Tensor:
    return primitive_forward('sigmoid', [x], {})


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    return primitive_forward('softmax', [x], {})


def layernorm(x: Tensor, axes: Tuple[int, ...] = (-1,), eps: float = LAYERNORM_EPS) -> Tensor:
    return primitive_forward('layernorm', [x], {'axes': tuple(axes), 'eps': eps})


def sum(x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return primitive_forward('sum', [x], {'axes': axes, 'keepdims': keepdims})


def avg_pool(x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    return primitive_forward('avg_pool', [x], {'axes': axes, 'keepdims': keepdims})


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return primitive_forward('reshape', [x], {'shape': tuple(int(s) for s in shape)})


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return primitive_forward('transpose', [x], {'axes': tuple(axes)})


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    return primitive_forward('concat', list(xs), {'axis': axis})


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    return primitive_forward('slice', [x], {'axis': axis, 'start': start, 'stop': stop})


def select(x: Tensor, axis: int, index: int) -> Tensor:
    """Take one entry along ``axis`` and drop that axis."""
    picked = narrow(x, axis, index, index + 1)
    shape = list(x.shape)
    del shape[axis]
    return reshape(picked, shape)


def gather(x: Tensor, axis: int, index: np.ndarray) -> Tensor:
    return primitive_forward('gather', [x], {'axis': axis, 'index': np.asarray(index)})


def scatter(x: Tensor, axis: int, index: np.ndarray, size: int) -> Tensor:
    return primitive_forward(
        'scatter', [x], {'axis': axis, 'index': np.asarray(index), 'size': size}
    )


def conv3d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return primitive_forward('conv3d', [x, weight], {'stride': stride, 'padding': padding})


def upsample2x(x: Tensor) -> Tensor:
    return primitive_forward('upsample2x', [x], {})


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    return primitive_forward('straight_through', [soft], {'value': np.asarray(hard, dtype=np.float64)})
