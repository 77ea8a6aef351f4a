from __future__ import annotations

from typing import Callable, Hashable

import numpy as np


class QTable:
    """Action values keyed by a discretised state; unseen states read as zero."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self.values: dict[Hashable, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.values)

    def get(self, key: Hashable) -> np.ndarray:
        row = self.values.get(key)
        return row if row is not None else np.zeros(self.n_actions)

    def row(self, key: Hashable) -> np.ndarray:
        row = self.values.get(key)
        if row is None:
            row = self.values[key] = np.zeros(self.n_actions)
        return row

    def max_abs(self) -> float:
        return max((float(np.abs(v).max()) for v in self.values.values()), default=0.0)


def qtable_update(
    q: QTable, s: Hashable, a: int, r: float, s_next: Hashable, done: bool, alpha: float, gamma: float
) -> QTable:
    target = r if done else r + gamma * float(q.get(s_next).max())
    row = q.row(s)
    row[a] += alpha * (target - row[a])
    return q


def sweep_q_learning(
    transition: Callable[[int, int], tuple[int, float, bool]],
    n_states: int,
    n_actions: int,
    gamma: float,
    alpha: float = 1.0,
    sweeps: int = 200,
    terminal: frozenset[int] = frozenset(),
) -> QTable:
    """Q-learning over a known deterministic model, visiting every (s, a) once per sweep."""
    q = QTable(n_actions)
    for _ in range(sweeps):
        for s in range(n_states):
            if s in terminal:
                continue
            for a in range(n_actions):
                s2, r, done = transition(s, a)
                qtable_update(q, s, a, r, s2, done, alpha, gamma)
    return q
