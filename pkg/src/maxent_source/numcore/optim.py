"""Adam with coupled (L2) weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import DivergenceError


class AdamState:
    def __init__(self, params, lr=1e-3, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Update ``params`` in place.

        Raises DivergenceError and leaves everything untouched when any
        gradient entry is non-finite.
        """
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient lists do not match the optimizer state")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != m.shape or g.shape != m.shape:
                raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
            if not np.all(np.isfinite(g)):
                raise DivergenceError("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params
