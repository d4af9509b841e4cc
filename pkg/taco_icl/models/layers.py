"""
Neural network building blocks on the TACO tensor: linear maps, layer norm,
feed-forward blocks and multi-head attention with an additive mask.
"""
from typing import Optional, Union

import numpy as np

from taco_icl.core import (
    Module,
    Tensor,
    gelu,
    layer_norm,
    linear,
    masked_softmax,
    parameter,
)
from taco_icl.core.rng import Rng
from taco_icl.exceptions import DimensionError


class Linear(Module):
    """Affine map with weight stored as (out_features, in_features)."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, std: float = 0.02, bias: bool = True):
        self.weight = parameter(rng.normal(0.0, std, size=(out_features, in_features)))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(d))
        self.bias = parameter(np.zeros(d))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self._eps)


class FeedForward(Module):
    """Position-wise two-layer GELU network."""

    def __init__(self, d: int, mult: int, rng: Rng, std: float = 0.02):
        self.up = Linear(d, d * mult, rng, std)
        self.down = Linear(d * mult, d, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


class MultiHeadAttention(Module):
    """
    Multi-head attention with one additive mask shared by every head.

    Scores are scaled by the square root of the per-head width.
    """

    def __init__(self, d: int, heads: int, rng: Rng, std: float = 0.02):
        if d % heads != 0:
            raise DimensionError(f"model width {d} is not divisible by {heads} heads")
        self._d = d
        self._heads = heads
        self.query = Linear(d, d, rng, std)
        # a key bias only shifts each score row
        self.key = Linear(d, d, rng, std, bias=False)
        self.value = Linear(d, d, rng, std)
        self.output = Linear(d, d, rng, std)

    def _split(self, x: Tensor) -> Tensor:
        length = x.shape[0]
        return x.reshape(length, self._heads, self._d // self._heads).transpose(1, 0, 2)

    def __call__(
        self,
        x: Tensor,
        mask: Optional[Union[Tensor, np.ndarray]] = None,
        context: Optional[Tensor] = None
    ) -> Tensor:
        """
        Attend from the rows of ``x`` over the rows of ``context`` (``x`` itself by default).

        Args:
            x: Queries (Tq, d)
            mask: Additive mask (Tq, Tk) with 0 or real entries and -inf where attention is barred
            context: Keys and values (Tk, d)

        Returns:
            Attention output (Tq, d)
        """
        context = x if context is None else context
        q = self._split(self.query(x))
        k = self._split(self.key(context))
        v = self._split(self.value(context))
        scores = q.matmul(k.transpose(0, 2, 1)) * (1.0 / np.sqrt(self._d // self._heads))
        if mask is not None:
            scores = scores + mask
        weights = masked_softmax(scores, axis=-1)
        mixed = weights.matmul(v).transpose(1, 0, 2).reshape(x.shape[0], self._d)
        return self.output(mixed)


class RelevanceMlp(Module):
    """Maps concat(guider row, token embedding) of width 2d to a relevance weight in (0, 1)."""

    def __init__(self, d: int, rng: Rng, std: float = 0.02):
        self.hidden = Linear(2 * d, d, rng, std)
        self.head = Linear(d, 1, rng, std)

    def __call__(self, pairs: Tensor) -> Tensor:
        return self.head(gelu(self.hidden(pairs))).reshape(pairs.shape[0]).sigmoid()
