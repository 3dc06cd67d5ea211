"""
Numeric primitives of the tensor engine.

Every primitive is a strategy object with a forward rule over numpy arrays
and a backward rule producing one gradient per input. Primitives never see
Tensor objects; the tape in apps.core.tensor does the wiring.
"""

from abc import ABC, abstractmethod
from itertools import product
from math import prod
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from apps.core.exceptions import ShapeError, UnknownPrimitiveError

Attrs = Dict[str, Any]
Saved = Any

_REGISTRY: Dict[str, 'Primitive'] = {}


class Primitive(ABC):
    """
    Abstract base class for numeric primitives.

    Subclasses declare their id, arity (None for variadic) and the attribute
    keys they need; the tape checks both before calling forward.
    """

    name: str = ''
    arity: Optional[int] = 1
    required_attrs: Tuple[str, ...] = ()

    def validate(self, shapes: Sequence[Tuple[int, ...]], attrs: Attrs) -> None:
        """Raise ShapeError when the operand extents are invalid."""

    @abstractmethod
    def forward(self, xs: Sequence[np.ndarray], attrs: Attrs) -> Tuple[np.ndarray, Saved]:
        """Compute the output and anything backward needs."""

    @abstractmethod
    def backward(
        self,
        grad: np.ndarray,
        xs: Sequence[np.ndarray],
        out: np.ndarray,
        saved: Saved,
        attrs: Attrs,
    ) -> List[Optional[np.ndarray]]:
        """Return the gradient for each input given the output gradient."""


def register(cls):
    """Class decorator adding a primitive to the registry."""
    instance = cls()
    _REGISTRY[instance.name] = instance
    return cls


def get_primitive(name: str) -> Primitive:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownPrimitiveError(name) from None


def registered_primitives() -> List[str]:
    return sorted(_REGISTRY)


def replace_primitive(name: str, primitive: Primitive) -> Primitive:
    """Swap a registered primitive, returning the previous one."""
    previous = get_primitive(name)
    _REGISTRY[name] = primitive
    return previous


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def _along_axis_index(index: np.ndarray, axis: int) -> Tuple[np.ndarray, ...]:
    grid = list(np.indices(index.shape, sparse=True))
    grid[axis] = index
    return tuple(grid)


# Element-wise arithmetic

class _Binary(Primitive):
    arity = 2

    def validate(self, shapes, attrs):
        try:
            np.broadcast_shapes(shapes[0], shapes[1])
        except ValueError:
            raise ShapeError(self.name, shapes, 'operands do not broadcast') from None


@register
class Add(_Binary):
    name = 'add'

    def forward(self, xs, attrs):
        return xs[0] + xs[1], None

    def backward(self, grad, xs, out, saved, attrs):
        return [unbroadcast(grad, xs[0].shape), unbroadcast(grad, xs[1].shape)]


@register
class Sub(_Binary):
    name = 'sub'

    def forward(self, xs, attrs):
        return xs[0] - xs[1], None

    def backward(self, grad, xs, out, saved, attrs):
        return [unbroadcast(grad, xs[0].shape), unbroadcast(-grad, xs[1].shape)]


@register
class Mul(_Binary):
    name = 'mul'

    def forward(self, xs, attrs):
        return xs[0] * xs[1], None

    def backward(self, grad, xs, out, saved, attrs):
        return [
            unbroadcast(grad * xs[1], xs[0].shape),
            unbroadcast(grad * xs[0], xs[1].shape),
        ]


@register
class Div(_Binary):
    name = 'div'

    def forward(self, xs, attrs):
        return xs[0] / xs[1], None

    def backward(self, grad, xs, out, saved, attrs):
        return [
            unbroadcast(grad / xs[1], xs[0].shape),
            unbroadcast(-grad * out / xs[1], xs[1].shape),
        ]


@register
class MatMul(Primitive):
    """Batched matrix product; the right operand may be a plain matrix."""

    name = 'matmul'
    arity = 2

    def validate(self, shapes, attrs):
        a, b = shapes
        if len(a) < 2 or len(b) < 2:
            raise ShapeError(self.name, shapes, 'operands must be at least 2-D')
        if a[-1] != b[-2]:
            raise ShapeError(self.name, shapes, f'inner extents {a[-1]} and {b[-2]} differ')
        try:
            np.broadcast_shapes(a[:-2], b[:-2])
        except ValueError:
            raise ShapeError(self.name, shapes, 'batch extents do not broadcast') from None

    def forward(self, xs, attrs):
        return np.matmul(xs[0], xs[1]), None

    def backward(self, grad, xs, out, saved, attrs):
        a, b = xs
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return [unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)]


# Activations

@register
class ReLU(Primitive):
    name = 'relu'

    def forward(self, xs, attrs):
        return np.maximum(xs[0], 0.0), None

    def backward(self, grad, xs, out, saved, attrs):
        return [grad * (xs[0] > 0)]


@register
class Sigmoid(Primitive):
    name = 'sigmoid'

    def forward(self, xs, attrs):
        return expit(xs[0]), None

    def backward(self, grad, xs, out, saved, attrs):
        return [grad * out * (1.0 - out)]


@register
class Softmax(Primitive):
    """Softmax over the last axis."""

    name = 'softmax'

    def validate(self, shapes, attrs):
        if len(shapes[0]) == 0:
            raise ShapeError(self.name, shapes, 'scalar input')

    def forward(self, xs, attrs):
        shifted = xs[0] - xs[0].max(axis=-1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=-1, keepdims=True), None

    def backward(self, grad, xs, out, saved, attrs):
        return [out * (grad - (grad * out).sum(axis=-1, keepdims=True))]


@register
class LayerNorm(Primitive):
    """
    Standardize over ``axes`` without affine parameters.

    With axes=(-1,) this is layer normalization; with the spatial axes of a
    channels-last volume it is instance normalization.
    """

    name = 'layernorm'
    required_attrs = ('axes', 'eps')

    def validate(self, shapes, attrs):
        ndim = len(shapes[0])
        if ndim == 0 or any(not -ndim <= a < ndim for a in attrs['axes']):
            raise ShapeError(self.name, shapes, f"axes {tuple(attrs['axes'])} out of range")

    def forward(self, xs, attrs):
        x = xs[0]
        axes = _normalize_axes(attrs['axes'], x.ndim)
        centered = x - x.mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=axes, keepdims=True) + attrs['eps'])
        normalized = centered * inv_std
        return normalized, (axes, inv_std)

    def backward(self, grad, xs, out, saved, attrs):
        axes, inv_std = saved
        mean_grad = grad.mean(axis=axes, keepdims=True)
        mean_proj = (grad * out).mean(axis=axes, keepdims=True)
        return [inv_std * (grad - mean_grad - out * mean_proj)]


# Reductions

@register
class Sum(Primitive):
    name = 'sum'
    required_attrs = ('axes', 'keepdims')

    def forward(self, xs, attrs):
        axes = _normalize_axes(attrs['axes'], xs[0].ndim)
        return xs[0].sum(axis=axes, keepdims=attrs['keepdims']), axes

    def backward(self, grad, xs, out, saved, attrs):
        grad = np.reshape(grad, out.shape)
        if not attrs['keepdims']:
            grad = np.expand_dims(grad, saved)
        return [np.broadcast_to(grad, xs[0].shape).copy()]


@register
class AvgPool(Primitive):
    """Average pooling over whole axes (global aggregation)."""

    name = 'avg_pool'
    required_attrs = ('axes', 'keepdims')

    def forward(self, xs, attrs):
        axes = _normalize_axes(attrs['axes'], xs[0].ndim)
        return xs[0].mean(axis=axes, keepdims=attrs['keepdims']), axes

    def backward(self, grad, xs, out, saved, attrs):
        count = prod(xs[0].shape[a] for a in saved)
        grad = np.reshape(grad, out.shape)
        if not attrs['keepdims']:
            grad = np.expand_dims(grad, saved)
        return [np.broadcast_to(grad / count, xs[0].shape).copy()]


# Layout

@register
class Reshape(Primitive):
    name = 'reshape'
    required_attrs = ('shape',)

    def validate(self, shapes, attrs):
        target = tuple(attrs['shape'])
        if prod(target) != prod(shapes[0]) or any(e <= 0 for e in target):
            raise ShapeError(self.name, [shapes[0], target], 'element counts differ')

    def forward(self, xs, attrs):
        return xs[0].reshape(tuple(attrs['shape'])), None

    def backward(self, grad, xs, out, saved, attrs):
        return [grad.reshape(xs[0].shape)]


@register
class Transpose(Primitive):
    name = 'transpose'
    required_attrs = ('axes',)

    def validate(self, shapes, attrs):
        if sorted(attrs['axes']) != list(range(len(shapes[0]))):
            raise ShapeError(self.name, [shapes[0], tuple(attrs['axes'])], 'not a permutation')

    def forward(self, xs, attrs):
        return np.ascontiguousarray(np.transpose(xs[0], attrs['axes'])), None

    def backward(self, grad, xs, out, saved, attrs):
        return [np.transpose(grad, np.argsort(attrs['axes']))]


@register
class Concat(Primitive):
    name = 'concat'
    arity = None
    required_attrs = ('axis',)

    def validate(self, shapes, attrs):
        if not shapes:
            raise ShapeError(self.name, shapes, 'nothing to concatenate')
        ndim = len(shapes[0])
        axis = attrs['axis'] % ndim if ndim else 0
        for shape in shapes:
            if len(shape) != ndim or any(
                s != r for k, (s, r) in enumerate(zip(shape, shapes[0])) if k != axis
            ):
                raise ShapeError(self.name, shapes, f'extents differ off axis {axis}')

    def forward(self, xs, attrs):
        return np.concatenate(xs, axis=attrs['axis']), None

    def backward(self, grad, xs, out, saved, attrs):
        bounds = np.cumsum([x.shape[attrs['axis']] for x in xs])[:-1]
        return list(np.split(grad, bounds, axis=attrs['axis']))


@register
class Slice(Primitive):
    """Contiguous slice ``start:stop`` along one axis."""

    name = 'slice'
    required_attrs = ('axis', 'start', 'stop')

    def validate(self, shapes, attrs):
        shape = shapes[0]
        axis = attrs['axis'] % len(shape)
        if not 0 <= attrs['start'] < attrs['stop'] <= shape[axis]:
            raise ShapeError(
                self.name, [shape], f"range {attrs['start']}:{attrs['stop']} on axis {axis}"
            )

    def _index(self, ndim, attrs):
        index = [slice(None)] * ndim
        index[attrs['axis']] = slice(attrs['start'], attrs['stop'])
        return tuple(index)

    def forward(self, xs, attrs):
        return xs[0][self._index(xs[0].ndim, attrs)].copy(), None

    def backward(self, grad, xs, out, saved, attrs):
        full = np.zeros_like(xs[0])
        full[self._index(xs[0].ndim, attrs)] = grad
        return [full]


@register
class Gather(Primitive):
    """``out = take_along_axis(x, index, axis)``."""

    name = 'gather'
    required_attrs = ('axis', 'index')

    def _full_index(self, shape, attrs):
        index = np.asarray(attrs['index'])
        axis = attrs['axis'] % len(shape)
        target = list(shape)
        target[axis] = index.shape[axis]
        return np.broadcast_to(index, tuple(target)), axis

    def validate(self, shapes, attrs):
        shape = shapes[0]
        index = np.asarray(attrs['index'])
        if index.ndim != len(shape):
            raise ShapeError(self.name, [shape, index.shape], 'index rank differs')
        axis = attrs['axis'] % len(shape)
        try:
            self._full_index(shape, attrs)
        except ValueError:
            raise ShapeError(self.name, [shape, index.shape], 'index does not broadcast') from None
        if index.size and (index.min() < 0 or index.max() >= shape[axis]):
            raise ShapeError(self.name, [shape, index.shape], 'index out of range')

    def forward(self, xs, attrs):
        full, axis = self._full_index(xs[0].shape, attrs)
        return np.take_along_axis(xs[0], full, axis=axis), None

    def backward(self, grad, xs, out, saved, attrs):
        full, axis = self._full_index(xs[0].shape, attrs)
        result = np.zeros_like(xs[0])
        np.add.at(result, _along_axis_index(full, axis), grad)
        return [result]


@register
class Scatter(Primitive):
    """Place ``x`` into a zero tensor at ``index`` along ``axis``."""

    name = 'scatter'
    required_attrs = ('axis', 'index', 'size')

    def _full_index(self, shape, attrs):
        index = np.asarray(attrs['index'])
        return np.broadcast_to(index, shape), attrs['axis'] % len(shape)

    def validate(self, shapes, attrs):
        shape = shapes[0]
        index = np.asarray(attrs['index'])
        if index.ndim != len(shape):
            raise ShapeError(self.name, [shape, index.shape], 'index rank differs')
        try:
            self._full_index(shape, attrs)
        except ValueError:
            raise ShapeError(self.name, [shape, index.shape], 'index does not broadcast') from None
        if index.size and (index.min() < 0 or index.max() >= attrs['size']):
            raise ShapeError(self.name, [shape, index.shape], 'index out of range')

    def _out_shape(self, shape, axis, attrs):
        target = list(shape)
        target[axis] = attrs['size']
        return tuple(target)

    def forward(self, xs, attrs):
        full, axis = self._full_index(xs[0].shape, attrs)
        result = np.zeros(self._out_shape(xs[0].shape, axis, attrs))
        result[_along_axis_index(full, axis)] = xs[0]
        return result, None

    def backward(self, grad, xs, out, saved, attrs):
        full, axis = self._full_index(xs[0].shape, attrs)
        return [grad[_along_axis_index(full, axis)]]


# Volumetric

@register
class Conv3d(Primitive):
    """
    Channels-last 3-D convolution with zero padding.

    x: (B, D, H, W, Cin), w: (k, k, k, Cin, Cout) -> (B, D', H', W', Cout).
    The kernel is applied offset by offset as k^3 matrix products.
    """

    name = 'conv3d'
    arity = 2
    required_attrs = ('stride', 'padding')

    def _out_extents(self, shape, k, attrs):
        s, p = attrs['stride'], attrs['padding']
        return tuple((n + 2 * p - k) // s + 1 for n in shape[1:4])

    def validate(self, shapes, attrs):
        x, w = shapes
        if len(x) != 5 or len(w) != 5:
            raise ShapeError(self.name, shapes, 'expected (B,D,H,W,C) input and (k,k,k,Cin,Cout) kernel')
        if not w[0] == w[1] == w[2]:
            raise ShapeError(self.name, shapes, 'kernel must be cubic')
        if x[4] != w[3]:
            raise ShapeError(self.name, shapes, f'input channels {x[4]} != kernel channels {w[3]}')
        if attrs['stride'] not in (1, 2) or attrs['padding'] < 0:
            raise ShapeError(self.name, shapes, f"stride {attrs['stride']} padding {attrs['padding']}")
        if any(e <= 0 for e in self._out_extents(x, w[0], attrs)):
            raise ShapeError(self.name, shapes, 'kernel larger than padded input')

    def _offsets(self, k, extents, stride):
        for a, b, c in product(range(k), repeat=3):
            yield (a, b, c), (
                slice(None),
                slice(a, a + stride * (extents[0] - 1) + 1, stride),
                slice(b, b + stride * (extents[1] - 1) + 1, stride),
                slice(c, c + stride * (extents[2] - 1) + 1, stride),
                slice(None),
            )

    def _pad(self, x, p):
        if p == 0:
            return x
        return np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0)))

    def forward(self, xs, attrs):
        x, w = xs
        k = w.shape[0]
        extents = self._out_extents(x.shape, k, attrs)
        padded = self._pad(x, attrs['padding'])
        out = np.zeros((x.shape[0],) + extents + (w.shape[4],))
        for (a, b, c), window in self._offsets(k, extents, attrs['stride']):
            out += np.matmul(padded[window], w[a, b, c])
        return out, padded

    def backward(self, grad, xs, out, saved, attrs):
        x, w = xs
        padded = saved
        k, cin, cout = w.shape[0], w.shape[3], w.shape[4]
        p = attrs['padding']
        extents = out.shape[1:4]
        grad_padded = np.zeros_like(padded)
        grad_w = np.zeros_like(w)
        flat_grad = grad.reshape(-1, cout)
        for (a, b, c), window in self._offsets(k, extents, attrs['stride']):
            grad_w[a, b, c] = padded[window].reshape(-1, cin).T @ flat_grad
            grad_padded[window] += np.matmul(grad, w[a, b, c].T)
        d, h, wd = x.shape[1:4]
        return [grad_padded[:, p:p + d, p:p + h, p:p + wd, :], grad_w]


@register
class Upsample2x(Primitive):
    """Nearest-neighbour 2x upsampling of a (B, D, H, W, C) volume."""

    name = 'upsample2x'

    def validate(self, shapes, attrs):
        if len(shapes[0]) != 5:
            raise ShapeError(self.name, shapes, 'expected (B,D,H,W,C)')

    def forward(self, xs, attrs):
        x = xs[0]
        for axis in (1, 2, 3):
            x = np.repeat(x, 2, axis=axis)
        return x, None

    def backward(self, grad, xs, out, saved, attrs):
        b, d, h, w, c = xs[0].shape
        return [grad.reshape(b, d, 2, h, 2, w, 2, c).sum(axis=(2, 4, 6))]


# Estimators

@register
class StraightThrough(Primitive):
    """
    Forward emits the fixed ``value``; backward passes the gradient to the
    soft input unchanged.
    """

    name = 'straight_through'
    required_attrs = ('value',)

    def validate(self, shapes, attrs):
        if np.shape(attrs['value']) != tuple(shapes[0]):
            raise ShapeError(self.name, [shapes[0], np.shape(attrs['value'])], 'value shape differs')

    def forward(self, xs, attrs):
        return np.array(attrs['value'], dtype=np.float64), None

    def backward(self, grad, xs, out, saved, attrs):
        return [grad]
