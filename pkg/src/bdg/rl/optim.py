from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, NonFiniteGradient


class Adam:
    """Adam over a flat parameter vector (updated in place)."""

    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0
        self._buf = np.empty(n_params)

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise DimensionMismatch(f"Adam expects {self.m.shape}, got params {params.shape} grads {grads.shape}")
        if not np.all(np.isfinite(grads)):
            raise NonFiniteGradient("gradient contains NaN or inf")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grads
        self.v *= b2
        np.multiply(grads, grads, out=self._buf)
        self._buf *= 1 - b2
        self.v += self._buf
        step_size = self.lr / (1 - b1**self.t)
        denom = np.sqrt(self.v / (1 - b2**self.t), out=self._buf)
        denom += self.eps
        params -= step_size * self.m / denom
        return params


def adam_step(state: Adam, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    return state.step(params, grads)
