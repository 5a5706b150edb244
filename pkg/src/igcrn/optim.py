from __future__ import annotations

import numpy as np

from .nn import ParameterStore
from .tensor import ShapeError


class Adam:
    """Adam with bias correction over a :class:`ParameterStore`.

    Moment buffers are keyed by parameter name so they serialize alongside
    the weights.
    """

    def __init__(self, params: ParameterStore, lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        k = self.step_count
        c1 = 1.0 - self.beta1 ** k
        c2 = 1.0 - self.beta2 ** k
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
            m = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            self.m[name] = m.astype(p.dtype)
            self.v[name] = v.astype(p.dtype)
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)

    def state(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "step_count": self.step_count}

    def load_state(self, state: dict, m: dict, v: dict) -> None:
        for key in ("lr", "beta1", "beta2", "eps"):
            setattr(self, key, float(state[key]))
        self.step_count = int(state["step_count"])
        for name in self.m:
            if m[name].shape != self.m[name].shape or v[name].shape != self.v[name].shape:
                raise ShapeError(f"optimizer moment shape mismatch for {name}")
            self.m[name] = m[name].copy()
            self.v[name] = v[name].copy()
