from __future__ import annotations

import numpy as np

from ..errors import NonFiniteLoss
from .mlp import Mlp
from .optim import Adam


def epsilon(t: int, start: float = 1.0, end: float = 0.05, decay_steps: int = 50_000) -> float:
    """Linear exploration schedule, constant after ``decay_steps``."""
    if t >= decay_steps:
        return end
    return start + (end - start) * (t / decay_steps)


def dqn_train_step(
    net: Mlp,
    target_net: Mlp,
    batch: tuple[np.ndarray, ...],
    gamma: float,
    optimizer: Adam,
    grad_clip: float = 10.0,
) -> float:
    """One regression step of ``net`` towards the target network's Bellman targets."""
    x, a, r, x2, done = batch
    n = len(a)
    y = r + gamma * (1.0 - done) * target_net(x2).max(axis=1)
    q, cache = net.forward(x)
    rows = np.arange(n)
    diff = q[rows, a] - y
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"DQN loss is {loss}")
    d_q = np.zeros_like(q)
    d_q[rows, a] = 2.0 * diff / n
    grad = net.backward(cache, d_q)
    np.clip(grad, -grad_clip, grad_clip, out=grad)
    optimizer.step(net.flat, grad)
    return loss
