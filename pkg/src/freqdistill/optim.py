"""Adam optimizer over named Parameters.

Standard bias-corrected Adam. Moments live per parameter and persist
for the optimizer's lifetime, including across training-phase
boundaries; freezing a parameter mid-run leaves its value and moments
untouched from that point on.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .autodiff import Parameter


class Adam:
    def __init__(
        self,
        params: Mapping[str, Parameter],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.value.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.value.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        """Apply one update to every trainable parameter."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if not p.trainable:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.value.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(np.float32)
