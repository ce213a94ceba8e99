"""Adam with the inverse-sqrt warmup schedule used for transformer training."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter


class WarmupSchedule:
    """lr(step) = factor * hidden^-0.5 * min(step^-0.5, step * warmup^-1.5)."""

    def __init__(self, hidden_size: int, warmup_steps: int = 200, factor: float = 1.0):
        if warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        self.hidden_size = hidden_size
        self.warmup_steps = warmup_steps
        self.factor = factor

    def lr(self, step: int) -> float:
        s = max(step, 1)
        return (
            self.factor
            * self.hidden_size ** -0.5
            * min(s ** -0.5, s * self.warmup_steps ** -1.5)
        )


class Adam:
    """Adam over an ordered parameter list; consumes and clears gradients."""

    def __init__(self, params, schedule: WarmupSchedule,
                 beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.params: list[Parameter] = list(params)
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> float:
        """Apply one update; returns the learning rate used."""
        self.step_count += 1
        lr = self.schedule.lr(self.step_count)
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"missing gradient for {p.name}")
            g = p.grad
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * g
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * g * g
            update = lr * (self._m[i] / bias1) / (np.sqrt(self._v[i] / bias2) + self.eps)
            if not np.all(np.isfinite(update)):
                raise FloatingPointError(f"non-finite update for {p.name}")
            p.data -= update
            p.grad = None
        return lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None
