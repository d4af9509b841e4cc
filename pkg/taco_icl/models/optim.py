"""
Optimizer and learning-rate schedule for training the TACO decoder.
"""
import math
from typing import Any, Dict, Iterable

import numpy as np

from taco_icl.core import ParameterSet
from taco_icl.exceptions import CheckpointMismatchError, ConfigError


class AdamW:
    """
    Class to apply Adam updates with decoupled weight decay.

    Parameters named in ``no_decay`` are updated without decay.
    """

    def __init__(
        self,
        params: ParameterSet,
        lr: float = 1e-4,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        no_decay: Iterable[str] = ()
    ):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {betas}")
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.no_decay = frozenset(no_decay)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def step(self, lr: float = None) -> None:
        lr = self.lr if lr is None else float(lr)
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and name not in self.no_decay:
                p.data = p.data - lr * self.weight_decay * p.data
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        if set(state["m"]) != set(self.m) or set(state["v"]) != set(self.v):
            raise CheckpointMismatchError("optimizer state does not match the model parameters")
        self.step_count = int(state["step"])
        self.m = {k: np.array(v, dtype=self.m[k].dtype) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=self.v[k].dtype) for k, v in state["v"].items()}


class CosineWarmRestarts:
    """
    Cosine annealing with warm restarts, advanced once per optimizer step.

    The first cycle lasts ``t0`` steps; each following cycle is ``t_mult``
    times longer. The rate is ``base_lr`` at the start of every cycle.
    """

    def __init__(self, base_lr: float, t0: int = 100, t_mult: int = 2, eta_min: float = 0.0):
        if t0 < 1 or t_mult < 1:
            raise ConfigError("t0 and t_mult must be at least 1")
        if eta_min < 0 or eta_min > base_lr:
            raise ConfigError("eta_min must lie in [0, base_lr]")
        self.base_lr = float(base_lr)
        self.t0 = int(t0)
        self.t_mult = int(t_mult)
        self.eta_min = float(eta_min)
        self.step_count = 0

    def _position(self, step: int):
        if self.t_mult == 1:
            return step % self.t0, self.t0
        period = self.t0
        while step >= period:
            step -= period
            period *= self.t_mult
        return step, period

    def lr_at(self, step: int) -> float:
        t_cur, period = self._position(step)
        return self.eta_min + (self.base_lr - self.eta_min) * (1.0 + math.cos(math.pi * t_cur / period)) / 2.0

    def get_lr(self) -> float:
        return self.lr_at(self.step_count)

    def step(self) -> None:
        self.step_count += 1

    def restart_steps(self, count: int):
        """Steps at which the first ``count`` restarts happen."""
        boundaries, step, period = [], 0, self.t0
        for _ in range(count):
            step += period
            boundaries.append(step)
            period *= self.t_mult
        return boundaries
