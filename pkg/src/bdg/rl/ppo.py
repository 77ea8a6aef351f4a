"""Generalized advantage estimation and the clipped-surrogate PPO update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LengthMismatch, NonFiniteLoss
from .mlp import Mlp, log_softmax
from .optim import Adam


def gae(
    rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns; ``values`` carries one extra bootstrap entry."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = len(rewards)
    if len(values) != T + 1 or len(dones) != T:
        raise LengthMismatch(f"need len(values) == len(rewards) + 1 == len(dones) + 1, got {len(values)}, {T}, {len(dones)}")
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv, adv + values[:T]


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def policy_loss(
    logits: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    adv: np.ndarray,
    clip: float,
    ent_coef: float,
) -> tuple[float, np.ndarray, dict[str, float]]:
    """Negative clipped surrogate minus the entropy bonus, and its gradient w.r.t. ``logits``."""
    n = len(actions)
    rows = np.arange(n)
    logp = log_softmax(logits)
    p = np.exp(logp)
    ratio = np.exp(logp[rows, actions] - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    entropy = -(p * logp).sum(axis=1)
    loss = -float(np.mean(np.minimum(unclipped, clipped))) - ent_coef * float(entropy.mean())

    # Where the clipped branch is the minimum the ratio is outside the clip
    # range, so only the unclipped branch carries gradient.
    active = (unclipped <= clipped).astype(np.float64)
    d_ratio = -(adv * active) / n
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    d_logits = (d_ratio * ratio)[:, None] * (onehot - p)
    d_logits += (ent_coef / n) * p * (logp + entropy[:, None])
    stats = {
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip)),
        "entropy": float(entropy.mean()),
    }
    return loss, d_logits, stats


@dataclass
class Rollout:
    x: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / max(float(adv.std()), 1e-8)


def ppo_update(
    policy: Mlp,
    value: Mlp,
    rollout: Rollout,
    opt_policy: Adam,
    opt_value: Adam,
    rng: np.random.Generator,
    clip: float = 0.2,
    epochs: int = 4,
    minibatch: int = 64,
    ent_coef: float = 0.01,
    vf_coef: float = 0.5,
) -> dict[str, float]:
    n = len(rollout.actions)
    adv = normalize(rollout.advantages)
    pi_losses, v_losses, clip_fracs = [], [], []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            idx = order[start : start + minibatch]
            x = rollout.x[idx]
            logits, cache = policy.forward(x)
            loss, d_logits, stats = policy_loss(logits, rollout.actions[idx], rollout.logp[idx], adv[idx], clip, ent_coef)
            v, v_cache = value.forward(x)
            err = v[:, 0] - rollout.returns[idx]
            v_loss = vf_coef * float(np.mean(err * err))
            if not (np.isfinite(loss) and np.isfinite(v_loss)):
                raise NonFiniteLoss(f"PPO loss is {loss}, value loss {v_loss}")
            opt_policy.step(policy.flat, policy.backward(cache, d_logits))
            opt_value.step(value.flat, value.backward(v_cache, (2.0 * vf_coef / len(idx)) * err[:, None]))
            pi_losses.append(loss)
            v_losses.append(v_loss)
            clip_fracs.append(stats["clip_fraction"])
    return {
        "policy_loss": float(np.mean(pi_losses)),
        "value_loss": float(np.mean(v_losses)),
        "clip_fraction": float(np.mean(clip_fracs)),
    }
