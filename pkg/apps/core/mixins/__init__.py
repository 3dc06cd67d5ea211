"""
Base classes and mixins for trainable components.

This module provides:
- Parameter registration in declaration order
- Recursive traversal with dotted names
- Train/eval mode switching
- Named state export and import
"""

from collections import OrderedDict
from typing import Dict, Iterator, List, Tuple

import numpy as np

from apps.core.exceptions import ParameterMismatchError
from apps.core.tensor import Tensor


class TrainingModeMixin:
    """
    Mixin that tracks whether a component runs in training mode.

    Sampling components (the token mask predictor) read this flag; all other
    components behave identically in both modes.
    """

    training: bool = True

    def train(self, mode: bool = True) -> 'TrainingModeMixin':
        self.training = mode
        for child in getattr(self, '_children', {}).values():
            child.train(mode)
        return self

    def eval(self) -> 'TrainingModeMixin':
        return self.train(False)


class Module(TrainingModeMixin):
    """
    Container of named parameters and child modules.

    Parameters and children are registered explicitly so the traversal order
    (and therefore the checkpoint record order) is the declaration order.
    """

    def __init__(self) -> None:
        self._parameters: 'OrderedDict[str, Tensor]' = OrderedDict()
        self._children: 'OrderedDict[str, Module]' = OrderedDict()
        self.training = True

    def add_parameter(self, name: str, value: np.ndarray) -> Tensor:
        tensor = Tensor(value, requires_grad=True, name=name)
        self._parameters[name] = tensor
        return tensor

    def add_module(self, name: str, module: 'Module') -> 'Module':
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._parameters.items():
            yield f"{prefix}{name}", tensor
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.parameters())

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    def state_dict(self) -> 'OrderedDict[str, np.ndarray]':
        return OrderedDict((name, tensor.numpy()) for name, tensor in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Replace parameter values from a name -> array mapping.

        Raises:
            ParameterMismatchError: on unknown, missing or mis-shaped entries
        """
        own = OrderedDict(self.named_parameters())
        for name in state:
            if name not in own:
                raise ParameterMismatchError(name, 'unknown parameter name')
        for name, tensor in own.items():
            if name not in state:
                raise ParameterMismatchError(name, 'missing from checkpoint')
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ParameterMismatchError(
                    name, f'shape {value.shape} does not match model shape {tensor.shape}'
                )
            tensor.data = np.ascontiguousarray(value)
            tensor.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError
