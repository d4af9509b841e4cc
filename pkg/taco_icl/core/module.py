"""
Parameter containers for models built on the TACO tensor.
"""
from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import numpy as np

from taco_icl.core.tensor import Tensor
from taco_icl.exceptions import CheckpointMismatchError


class ParameterSet(OrderedDict):
    """
    Class to map dotted parameter names to trainable tensors, in registration order.
    """

    def zero_grad(self) -> None:
        for tensor in self.values():
            tensor.grad = None

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copy every parameter value."""
        return {name: t.data.copy() for name, t in self.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Overwrite parameter values in place.

        Args:
            state: Name to array map; must cover exactly these parameters

        Raises:
            CheckpointMismatchError: If names or shapes differ
        """
        missing = set(self) - set(state)
        extra = set(state) - set(self)
        if missing or extra:
            raise CheckpointMismatchError(
                f"parameter names differ (missing={sorted(missing)}, unexpected={sorted(extra)})"
            )
        for name, tensor in self.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise CheckpointMismatchError(
                    f"shape of {name} is {value.shape}, expected {tensor.shape}"
                )
            tensor.data = value.astype(tensor.data.dtype, copy=True)


class Module:
    """
    Base class for components that own trainable tensors.

    Parameters are discovered from instance attributes: trainable tensors,
    sub-modules, and lists or dicts of sub-modules.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{index}.")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{key}.")

    def parameters(self) -> ParameterSet:
        return ParameterSet(self.named_parameters())
