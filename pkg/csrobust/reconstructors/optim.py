"""
First-order optimizers over named numpy parameter arrays.
"""

from __future__ import annotations

import math
from typing import Dict

import numpy as np

from csrobust.core.errors import InvalidSpecError, NumericalFailureError

Params = Dict[str, np.ndarray]


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise InvalidSpecError(f"Adam lr must be > 0, got {lr}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise InvalidSpecError(f"Adam betas must be in [0, 1), got ({beta1}, {beta2})")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.steps = 0
        self._m: Params = {}
        self._v: Params = {}

    def step(self, params: Params, grads: Params) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, grad in grads.items():
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(grad)
                v = np.zeros_like(grad)
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self._m[name], self._v[name] = m, v
            params[name] -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


class LinearScheduleGD:
    """Plain gradient descent whose step size moves linearly from ``lr`` to ``lr_end``."""

    def __init__(self, lr: float, lr_end: float, iterations: int):
        if lr <= 0 or lr_end <= 0:
            raise InvalidSpecError(f"GD step sizes must be > 0, got {lr} -> {lr_end}")
        self.lr = float(lr)
        self.lr_end = float(lr_end)
        self.iterations = max(1, int(iterations))
        self.steps = 0

    def current_lr(self) -> float:
        fraction = min(self.steps, self.iterations - 1) / max(1, self.iterations - 1)
        return self.lr + (self.lr_end - self.lr) * fraction

    def step(self, params: Params, grads: Params) -> None:
        lr = self.current_lr()
        for name, grad in grads.items():
            params[name] -= lr * grad
        self.steps += 1


def make_optimizer(name: str, lr: float, beta1: float, beta2: float, lr_end: float, iterations: int):
    if name == "adam":
        return Adam(lr=lr, beta1=beta1, beta2=beta2)
    if name == "gd":
        return LinearScheduleGD(lr=lr, lr_end=lr_end, iterations=iterations)
    raise InvalidSpecError(f"Unknown optimizer {name!r}; expected adam or gd")


def check_finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NumericalFailureError(f"{what} is not finite ({value})")
    return value
