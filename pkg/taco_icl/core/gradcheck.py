"""
Central-difference gradient checking against reverse-mode gradients.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from taco_icl.core.rng import Rng
from taco_icl.core.tensor import Tensor, no_grad
from taco_icl.exceptions import GradientProbeError


@dataclass
class GradCheckReport:
    """
    Per-parameter comparison of analytic and numeric gradients.

    A parameter passes when max|analytic - numeric| <= atol + tol * scale,
    where scale is the larger of max|analytic| and max|numeric|. ``errors``
    holds the relative error abs_err / scale for reporting.
    """
    errors: Dict[str, float] = field(default_factory=dict)
    abs_errors: Dict[str, float] = field(default_factory=dict)
    scales: Dict[str, float] = field(default_factory=dict)
    tol: float = 1e-6
    atol: float = 1e-7
    checked_entries: Dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def failures(self) -> List[str]:
        return [
            name for name, abs_err in self.abs_errors.items()
            if abs_err > self.atol + self.tol * self.scales[name]
        ]

    @property
    def passed(self) -> bool:
        return not self.failures()

    def worst(self) -> Optional[str]:
        """Worst failing parameter, or the largest relative error when all pass."""
        failing = self.failures()
        if failing:
            return max(failing, key=lambda name: self.abs_errors[name] - self.tol * self.scales[name])
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)


def _evaluate(f: Callable[[], Tensor]) -> float:
    with no_grad():
        value = float(f().data)
    if not np.isfinite(value):
        raise GradientProbeError(f"function is not finite at the probe point ({value})")
    return value


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-6,
    max_entries: Optional[int] = None,
    rng: Optional[Rng] = None,
    atol: float = 1e-7
) -> GradCheckReport:
    """
    Compare reverse-mode gradients of ``f`` with central differences.

    Args:
        f: Zero-argument callable returning a scalar tensor built from ``params``
        params: Named leaf tensors to probe
        h: Finite-difference step
        tol: Relative tolerance
        max_entries: Probe at most this many entries per parameter
        rng: Generator for subsampling entries (required with ``max_entries``)
        atol: Absolute tolerance; covers gradients that are zero up to rounding

    Returns:
        GradCheckReport

    Raises:
        GradientProbeError: If ``f`` is not finite at the point or any probe
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if atol < 0:
        raise ValueError("atol must be non-negative")

    for tensor in params.values():
        tensor.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise GradientProbeError(f"function is not finite at the probe point ({out.data})")
    out.backward()

    report = GradCheckReport(tol=tol, atol=atol)
    for name, tensor in params.items():
        analytic = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad.copy()
        tensor.data = np.ascontiguousarray(tensor.data).reshape(tensor.shape)
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                raise ValueError("rng is required when max_entries subsamples")
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))

        numeric = np.zeros(indices.size)
        for k, index in enumerate(indices):
            original = flat[index]
            flat[index] = original + h
            plus = _evaluate(f)
            flat[index] = original - h
            minus = _evaluate(f)
            flat[index] = original
            numeric[k] = (plus - minus) / (2.0 * h)

        picked = analytic.reshape(-1)[indices]
        scale = max(np.max(np.abs(picked), initial=0.0), np.max(np.abs(numeric), initial=0.0))
        abs_err = float(np.max(np.abs(picked - numeric), initial=0.0))
        report.abs_errors[name] = abs_err
        report.scales[name] = float(scale)
        report.errors[name] = abs_err / max(scale, 1e-12)
        report.checked_entries[name] = int(indices.size)

    return report
