from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Fixed-capacity ring buffer of ``(x, a, r, x', done)`` transitions."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.x = np.zeros((capacity, dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.x2 = np.zeros((capacity, dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def push(self, x: np.ndarray, a: int, r: float, x2: np.ndarray, done: bool) -> None:
        i = self._next
        self.x[i] = x
        self.a[i] = a
        self.r[i] = r
        self.x2[i] = x2
        self.done[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, self.size, size=batch)
        return self.x[idx], self.a[idx], self.r[idx], self.x2[idx], self.done[idx]

    def items(self) -> list[tuple]:
        """Contents oldest first."""
        start = self._next if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [(self.x[i].copy(), int(self.a[i]), float(self.r[i]), self.x2[i].copy(), bool(self.done[i])) for i in order]
