"""
Differentiable functions over Tensors: activations, normalization, masked
softmax, similarities and the KL-to-uniform divergence.
"""
from typing import Optional, Sequence

import numpy as np

from taco_icl.core.tensor import ArrayLike, Tensor, as_tensor
from taco_icl.exceptions import (
    DegenerateRowError,
    DegenerateVectorError,
    DimensionError,
    InvalidDistributionError,
)

DISTRIBUTION_TOLERANCE = 1e-6


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product; see ``Tensor.matmul``."""
    return as_tensor(a).matmul(b)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Affine map ``x @ weight.T + bias`` with weight stored as (out, in).
    """
    out = x.matmul(weight.T)
    if bias is not None:
        out = out + bias
    return out


def sigmoid(x: ArrayLike) -> Tensor:
    return as_tensor(x).sigmoid()


def tanh(x: ArrayLike) -> Tensor:
    return as_tensor(x).tanh()


def gelu(x: ArrayLike) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    inner = (x + (x ** 3) * 0.044715) * float(np.sqrt(2.0 / np.pi))
    return x * 0.5 * (inner.tanh() + 1.0)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    """Stack tensors along a new axis."""
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def causal_mask(length: int) -> np.ndarray:
    """Boolean matrix that is True where column j lies after row i."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def masked_fill(x: ArrayLike, mask: np.ndarray, value: float) -> Tensor:
    """
    Replace entries where ``mask`` is True with ``value``.

    This is the only place an additive mask acquires -inf sentinels; the
    filled entries receive no gradient.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, value, x.data)
    return Tensor._result(out, (x,), lambda g: (np.where(mask, 0.0, g),))


def _finite_max(data: np.ndarray, axis: int) -> np.ndarray:
    finite = np.isfinite(data)
    if not np.all(np.any(finite, axis=axis)):
        raise DegenerateRowError("softmax slice has no finite entry")
    return np.max(np.where(finite, data, -np.inf), axis=axis, keepdims=True)


def masked_softmax(logits: ArrayLike, axis: int = -1) -> Tensor:
    """
    Softmax that maps -inf entries to exactly zero.

    Args:
        logits: Scores, possibly holding -inf mask sentinels
        axis: Axis to normalize over

    Returns:
        Probabilities summing to one over the finite support of every slice

    Raises:
        DegenerateRowError: If a slice is entirely -inf
    """
    logits = as_tensor(logits)
    data = logits.data
    shifted = np.exp(data - _finite_max(data, axis))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (logits,), backward)


softmax = masked_softmax


def log_softmax(logits: ArrayLike, axis: int = -1) -> Tensor:
    """Log-probabilities; -inf entries stay -inf and receive no gradient."""
    logits = as_tensor(logits)
    data = logits.data
    shifted = data - _finite_max(data, axis)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    probs = np.exp(y)
    finite = np.isfinite(data)

    def backward(g):
        g = np.where(finite, g, 0.0)
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(y, (logits,), backward)


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5) -> Tensor:
    """
    Normalize the last axis to zero mean and unit variance, then apply gain and bias.

    Args:
        x: Input (..., d)
        gain: Scale (d,)
        bias: Shift (d,)
        eps: Variance floor

    Returns:
        Normalized tensor of the input shape
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv_std / d * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(out, (x, gain, bias), backward)


def _row_norms(x: Tensor) -> Tensor:
    norms = (x * x).sum(axis=-1, keepdims=True).sqrt()
    if np.any(norms.data == 0.0):
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    return norms


def cosine_sim(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Cosine similarity of two vectors of equal length.

    Raises:
        DimensionError: If the lengths differ
        DegenerateVectorError: If either vector has zero norm
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"cosine_sim needs equal-length vectors, got {a.shape} and {b.shape}")
    return (a * b).sum() / (_row_norms(a) * _row_norms(b)).reshape(())


def cosine_matrix(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Pairwise cosine similarities between the rows of ``a`` (m, k) and ``b`` (n, k)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"cosine_matrix width mismatch: {a.shape} vs {b.shape}")
    return (a / _row_norms(a)).matmul((b / _row_norms(b)).T)


def kl_uniform(p: ArrayLike, support: Optional[np.ndarray] = None) -> Tensor:
    """
    KL divergence from ``p`` to the uniform distribution over its support.

    Computed as sum(p log p) + log m with 0 log 0 taken as 0; entries with
    p = 0 receive zero gradient.

    Args:
        p: Probability vector
        support: Boolean mask of the support; all entries when omitted

    Returns:
        Scalar tensor

    Raises:
        InvalidDistributionError: On negative mass, mass outside the support,
            or a total that differs from one by more than 1e-6
    """
    p = as_tensor(p)
    data = p.data
    support = np.ones(data.shape, dtype=bool) if support is None else np.asarray(support, dtype=bool)
    m = int(support.sum())
    if m == 0:
        raise InvalidDistributionError("empty support")
    if np.any(data < 0) or not np.all(np.isfinite(data)):
        raise InvalidDistributionError("probabilities must be finite and non-negative")
    if np.any(data[~support] > 0):
        raise InvalidDistributionError("probability mass outside the support")
    if abs(float(data.sum()) - 1.0) > DISTRIBUTION_TOLERANCE:
        raise InvalidDistributionError(f"probabilities sum to {float(data.sum())}, not 1")

    positive = data > 0
    safe = np.where(positive, data, 1.0)
    value = float(np.sum(np.where(positive, data * np.log(safe), 0.0))) + float(np.log(m))

    def backward(g):
        return (np.where(positive, g * (np.log(safe) + 1.0), 0.0),)

    return Tensor._result(np.asarray(value), (p,), backward)
