"""Adam and the two-stage learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class LrSchedule:
    warm_lr: float = 1e-3
    warm_epochs: int = 2
    main_lr: float = 1e-4

    def __call__(self, epoch):
        return self.warm_lr if epoch < self.warm_epochs else self.main_lr


class Adam:
    """Bias-corrected Adam over a list of leaf tensors."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        for p, g in zip(self.params, grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in parameter {p.name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        return self.m, self.v
