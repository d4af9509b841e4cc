"""
Reverse-mode differentiable tensor for the TACO demonstration configurator.

A Tensor wraps a NumPy array. Operations on tensors that require gradients
record their parents and a backward closure; ``Tensor.backward`` walks the
recorded graph once in reverse topological order.
"""
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from taco_icl.exceptions import ConfigError, DimensionError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_grad_state = threading.local()
_DEFAULT_DTYPE = np.float64


def is_grad_enabled() -> bool:
    """Whether operations on the current thread record a graph."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, beam search, probes)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def set_default_dtype(name: str) -> None:
    """
    Set the floating dtype new tensors are created with.

    Args:
        name: "float64" or "float32"
    """
    global _DEFAULT_DTYPE
    if name not in ("float64", "float32"):
        raise ConfigError(f"Unsupported dtype: {name}")
    _DEFAULT_DTYPE = np.dtype(name).type


def get_default_dtype():
    return _DEFAULT_DTYPE


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def topological_order(root: "Tensor") -> List["Tensor"]:
    """
    Order the graph below ``root`` so that every node follows its parents.

    Args:
        root: Output tensor

    Returns:
        Nodes that require gradients, parents first
    """
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


class Tensor:
    """
    Class to hold an array and, when it requires gradients, its place in the graph.
    """

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None

    @classmethod
    def _result(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
    ) -> "Tensor":
        """Wrap an op result, attaching it to the graph when any parent needs gradients."""
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # --- convenience ---
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{req}{nm})"

    def __float__(self) -> float:
        return float(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # --- autograd core ---
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Accumulate gradients of this tensor into every leaf that requires them.

        Args:
            grad: Seed gradient; required for non-scalar outputs
        """
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("grad must be provided for non-scalar outputs")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=self.data.dtype)

        if not self.requires_grad:
            return

        pending = {id(self): seed}
        for node in reversed(topological_order(self)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = _unbroadcast(parent_grad, parent.shape)
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    # --- arithmetic ---
    def __add__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        return Tensor._result(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        return Tensor._result(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._result(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._result(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float) -> "Tensor":
        x = self.data
        p = float(exponent)
        return Tensor._result(x ** p, (self,), lambda g: (g * p * x ** (p - 1.0),))

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return self.matmul(other)

    def matmul(self, other: ArrayLike) -> "Tensor":
        """
        Matrix product with NumPy broadcasting over leading axes.

        Args:
            other: Right operand

        Returns:
            Product tensor

        Raises:
            DimensionError: If the inner dimensions disagree
        """
        other = as_tensor(other)
        if self.ndim == 0 or other.ndim == 0:
            raise DimensionError("matmul requires at least 1-D operands")
        if self.ndim == 1 and other.ndim == 1:
            if self.shape != other.shape:
                raise DimensionError(f"matmul inner dimensions disagree: {self.shape} @ {other.shape}")
            return (self * other).sum()
        if self.ndim == 1:
            out = self.reshape(1, -1).matmul(other)
            return out.reshape(*out.shape[:-2], out.shape[-1])
        if other.ndim == 1:
            out = self.matmul(other.reshape(-1, 1))
            return out.reshape(*out.shape[:-1])
        if self.shape[-1] != other.shape[-2]:
            raise DimensionError(f"matmul inner dimensions disagree: {self.shape} @ {other.shape}")
        a, b = self.data, other.data

        def backward(g):
            return np.matmul(g, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), g)

        return Tensor._result(np.matmul(a, b), (self, other), backward)

    # --- shape ---
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor._result(self.data.reshape(shape), (self,), lambda g: (g.reshape(original),))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._result(np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inverse),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, index) -> "Tensor":
        if isinstance(index, Tensor):
            index = index.data.astype(int)
        shape, dtype = self.shape, self.data.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._result(self.data[index], (self,), backward)

    # --- reductions ---
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # --- elementwise ---
    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return Tensor._result(y, (self,), lambda g: (g * y,))

    def log(self) -> "Tensor":
        x = self.data
        return Tensor._result(np.log(x), (self,), lambda g: (g / x,))

    def sqrt(self) -> "Tensor":
        y = np.sqrt(self.data)
        return Tensor._result(y, (self,), lambda g: (g * 0.5 / y,))

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        return Tensor._result(y, (self,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self) -> "Tensor":
        y = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor._result(y, (self,), lambda g: (g * y * (1.0 - y),))

    def clip(self, low: Optional[float] = None, high: Optional[float] = None) -> "Tensor":
        x = self.data
        inside = np.ones_like(x, dtype=bool)
        if low is not None:
            inside &= x >= low
        if high is not None:
            inside &= x <= high
        return Tensor._result(np.clip(x, low, high), (self,), lambda g: (g * inside,))


def as_tensor(value: ArrayLike) -> Tensor:
    """Return ``value`` unchanged if it is a Tensor, otherwise wrap it as a constant."""
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Create a trainable leaf tensor."""
    return Tensor(np.array(data, dtype=_DEFAULT_DTYPE), requires_grad=True, name=name)
