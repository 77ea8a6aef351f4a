"""Reinforcement-learning agents as scikit-learn style estimators.

Hyperparameters are constructor arguments (so ``get_params``/``set_params``
and ``sklearn.base.clone`` work); ``fit`` consumes a :class:`TrainingTask`
instead of an ``(X, y)`` pair, and ``predict`` maps feature rows to greedy
actions.  Fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..env import Env, EnvConfig, EpisodeOutcome, Observation, Transition, derive_seed, make_rng, run_episode
from .dqn import dqn_train_step, epsilon
from .mlp import Mlp, log_softmax
from .optim import Adam
from .ppo import Rollout, gae, ppo_update
from .qtable import QTable, qtable_update
from .replay import ReplayBuffer

# PRNG sub-streams of the run seed.
_INIT_STREAM = 1
_EXPLORE_STREAM = 2
_EPISODE_STREAM = 1 << 32


@dataclass
class TrainingTask:
    """Everything an agent needs to learn one scenario."""

    make_env: Callable[[], Env]
    config: EnvConfig
    features: Callable[[Observation], np.ndarray]
    reward: Callable[[Transition], float]
    success: Callable[[EpisodeOutcome], bool] | None = None
    threshold: float = 0.95


@dataclass
class TrainingStats:
    epochs: list[dict[str, Any]] = field(default_factory=list)
    env_steps: int = 0
    episodes: int = 0
    best_probe_success: float | None = None
    best_probe_step: int | None = None
    stopped_early: bool = False
    wall_clock: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs,
            "env_steps": self.env_steps,
            "episodes": self.episodes,
            "best_probe_success": self.best_probe_success,
            "best_probe_step": self.best_probe_step,
            "stopped_early": self.stopped_early,
            "wall_clock": self.wall_clock,
        }


class _Collector:
    """Drives one environment across episode boundaries during training."""

    def __init__(self, task: TrainingTask, seed: int):
        self.task = task
        self.seed = seed
        self.env = task.make_env()
        self.episode = 0
        self.x = self._reset()
        self.finished_returns: list[float] = []
        self.finished_events: list[Counter] = []

    def _reset(self) -> np.ndarray:
        obs = self.env.reset(self.task.config, derive_seed(self.seed, _EPISODE_STREAM + self.episode))
        self.ret = 0.0
        self.events: Counter = Counter()
        return self.task.features(obs)

    def step(self, action: int) -> tuple[np.ndarray, int, float, np.ndarray, bool]:
        x = self.x
        tr = self.env.step(action)
        r = self.task.reward(tr)
        x2 = self.task.features(tr.obs)
        self.ret += r
        self.events.update(tr.events)
        if tr.done:
            self.finished_returns.append(self.ret)
            self.finished_events.append(self.events)
            self.episode += 1
            self.x = self._reset()
        else:
            self.x = x2
        return x, action, r, x2, tr.done

    def drain(self) -> dict[str, Any]:
        """Per-epoch episode statistics since the last call."""
        rets, evs = self.finished_returns, self.finished_events
        self.finished_returns, self.finished_events = [], []
        names = sorted({name for c in evs for name in c})
        return {
            "episodes": len(rets),
            "mean_return": float(np.mean(rets)) if rets else None,
            "mean_events": {n: float(np.mean([c.get(n, 0) for c in evs])) for n in names},
        }


class BaseAgent(BaseEstimator):
    algorithm = ""

    # -- inference -------------------------------------------------------
    def _scores(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        """Greedy action per feature row; ties go to the lowest action index."""
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, agent was fitted with {self.n_features_in_}")
        return np.argmax(self._scores(X), axis=1)

    def act(self, x: np.ndarray) -> int:
        """Greedy action for one feature vector (no validation; hot path)."""
        return int(np.argmax(self._scores(x[None, :])[0]))

    def policy(self, features: Callable[[Observation], np.ndarray]) -> Callable[[Observation], int]:
        return lambda obs: self.act(features(obs))

    def evaluate(self, task: TrainingTask, episodes: int, seed: int = 0) -> list[EpisodeOutcome]:
        env = task.make_env()
        act = self.policy(task.features)
        return [run_episode(env, task.config, seed + i, act, task.reward) for i in range(episodes)]

    def score(self, task: TrainingTask, episodes: int = 20, seed: int = 0) -> float:
        """Fraction of greedy episodes in which ``task.success`` holds."""
        if task.success is None:
            raise ValueError("task has no success predicate")
        outcomes = self.evaluate(task, episodes, seed)
        return sum(bool(task.success(o)) for o in outcomes) / len(outcomes)

    # -- training scaffolding -------------------------------------------
    def _check_budget(self) -> None:
        if int(self.budget) < 1:
            raise ValueError("budget must be >= 1")

    def _snapshot(self) -> Any:
        raise NotImplementedError

    def _restore(self, snapshot: Any) -> None:
        raise NotImplementedError

    def _begin(self, task: TrainingTask, n_features: int, n_actions: int) -> None:
        self.n_features_in_ = n_features
        self.n_actions_ = n_actions
        self.training_stats_ = TrainingStats()
        self._best: tuple[float, int, Any] | None = None
        self._t0 = time.perf_counter()

    def _probe(self, task: TrainingTask, step: int) -> float | None:
        """Greedy success rate; the best-scoring parameters so far are kept."""
        if task.success is None:
            return None
        rate = self.score(task, int(self.probe_episodes), seed=int(self.random_state))
        if self._best is None or rate >= self._best[0]:
            self._best = (rate, step, self._snapshot())
        return rate

    def _finish(self, step: int) -> None:
        stats = self.training_stats_
        if self._best is not None:
            rate, best_step, snap = self._best
            self._restore(snap)
            stats.best_probe_success = rate
            stats.best_probe_step = best_step
        stats.env_steps = step
        stats.wall_clock = time.perf_counter() - self._t0
        del self._best

    def _epoch(self, collector: _Collector, step: int, losses: list[float], probe: float | None) -> None:
        row = {"env_steps": step, **collector.drain(), "loss": float(np.mean(losses)) if losses else None}
        row["probe_success"] = probe
        self.training_stats_.epochs.append(row)
        self.training_stats_.episodes = collector.episode
        losses.clear()


def _env_dims(task: TrainingTask) -> tuple[int, int]:
    env = task.make_env()
    x = task.features(env.reset(task.config, 0))
    return len(x), env.n_actions


class QLearningAgent(BaseAgent):
    """Tabular Q-learning over features discretised into ``bin_width`` cells."""

    algorithm = "qtable"

    def __init__(
        self,
        alpha: float = 0.1,
        gamma: float = 0.99,
        bin_width: float = 0.1,
        epsilon_start: float = 1.0,
        epsilon_end: float = 0.05,
        epsilon_decay_steps: int = 50_000,
        budget: int = 100_000,
        probe_interval: int = 10_000,
        probe_episodes: int = 20,
        random_state: int = 0,
    ):
        self.alpha = alpha
        self.gamma = gamma
        self.bin_width = bin_width
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_steps = epsilon_decay_steps
        self.budget = budget
        self.probe_interval = probe_interval
        self.probe_episodes = probe_episodes
        self.random_state = random_state

    def key(self, x: np.ndarray) -> tuple[int, ...]:
        return tuple(int(v) for v in np.floor(np.asarray(x) / self.bin_width))

    def _scores(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.q_table_.get(self.key(row)) for row in X])

    def _snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.q_table_.values.items()}

    def _restore(self, snapshot: dict) -> None:
        self.q_table_.values = snapshot

    def fit(self, task: TrainingTask) -> "QLearningAgent":
        self._check_budget()
        d, n_actions = _env_dims(task)
        self._begin(task, d, n_actions)
        self.q_table_ = QTable(n_actions)
        rng = make_rng(self.random_state, _EXPLORE_STREAM)
        col = _Collector(task, self.random_state)
        losses: list[float] = []
        probed_at = None
        step = 0
        for step in range(1, int(self.budget) + 1):
            s = self.key(col.x)
            eps = epsilon(step - 1, self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps)
            if rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                a = int(np.argmax(self.q_table_.get(s)))
            _, _, r, x2, done = col.step(a)
            before = self.q_table_.get(s)[a]
            qtable_update(self.q_table_, s, a, r, self.key(x2), done, self.alpha, self.gamma)
            losses.append(float((self.q_table_.get(s)[a] - before) ** 2))
            if step % self.probe_interval == 0:
                rate = self._probe(task, step)
                probed_at = step
                self._epoch(col, step, losses, rate)
                if rate is not None and rate >= task.threshold:
                    self.training_stats_.stopped_early = True
                    break
        if probed_at != step:
            self._epoch(col, step, losses, self._probe(task, step))
        self._finish(step)
        return self


class DQNAgent(BaseAgent):
    """Deep Q-network with experience replay and a periodically synced target network."""

    algorithm = "dqn"

    def __init__(
        self,
        hidden: tuple[int, ...] = (64, 64),
        buffer_size: int = 100_000,
        batch_size: int = 64,
        gamma: float = 0.99,
        lr: float = 1e-3,
        target_sync: int = 1_000,
        learning_starts: int = 1_000,
        train_freq: int = 1,
        grad_clip: float = 10.0,
        epsilon_start: float = 1.0,
        epsilon_end: float = 0.05,
        epsilon_decay_steps: int = 50_000,
        budget: int = 500_000,
        probe_interval: int = 10_000,
        probe_episodes: int = 20,
        random_state: int = 0,
    ):
        self.hidden = hidden
        self.buffer_size = buffer_size
        self.batch_size = batch_size
        self.gamma = gamma
        self.lr = lr
        self.target_sync = target_sync
        self.learning_starts = learning_starts
        self.train_freq = train_freq
        self.grad_clip = grad_clip
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_steps = epsilon_decay_steps
        self.budget = budget
        self.probe_interval = probe_interval
        self.probe_episodes = probe_episodes
        self.random_state = random_state

    def _scores(self, X: np.ndarray) -> np.ndarray:
        return self.net_(X)

    def _snapshot(self) -> np.ndarray:
        return self.net_.flat.copy()

    def _restore(self, snapshot: np.ndarray) -> None:
        self.net_.flat[...] = snapshot

    def fit(self, task: TrainingTask) -> "DQNAgent":
        self._check_budget()
        d, n_actions = _env_dims(task)
        self._begin(task, d, n_actions)
        sizes = [d, *self.hidden, n_actions]
        self.net_ = Mlp.glorot(sizes, make_rng(self.random_state, _INIT_STREAM))
        target = self.net_.copy()
        opt = Adam(len(self.net_.flat), lr=self.lr)
        buffer = ReplayBuffer(int(self.buffer_size), d)
        rng = make_rng(self.random_state, _EXPLORE_STREAM)
        col = _Collector(task, self.random_state)
        net = self.net_
        losses: list[float] = []
        probed_at = None
        step = 0
        for step in range(1, int(self.budget) + 1):
            eps = epsilon(step - 1, self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps)
            if rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                a = int(np.argmax(net(col.x)))
            x, a, r, x2, done = col.step(a)
            buffer.push(x, a, r, x2, done)
            if len(buffer) >= self.learning_starts and step % self.train_freq == 0:
                batch = buffer.sample(rng, int(self.batch_size))
                losses.append(dqn_train_step(net, target, batch, self.gamma, opt, self.grad_clip))
            if step % self.target_sync == 0:
                target.load(net)
            if step % self.probe_interval == 0:
                rate = self._probe(task, step)
                probed_at = step
                self._epoch(col, step, losses, rate)
                if rate is not None and rate >= task.threshold:
                    self.training_stats_.stopped_early = True
                    break
        if probed_at != step:
            self._epoch(col, step, losses, self._probe(task, step))
        self._finish(step)
        return self


class PPOAgent(BaseAgent):
    """PPO with separate policy and value networks, GAE and a clipped surrogate."""

    algorithm = "ppo"

    def __init__(
        self,
        hidden: tuple[int, ...] = (64, 64),
        n_steps: int = 2048,
        epochs: int = 4,
        minibatch: int = 64,
        gamma: float = 0.99,
        gae_lambda: float = 0.95,
        clip: float = 0.2,
        ent_coef: float = 0.01,
        vf_coef: float = 0.5,
        lr: float = 3e-4,
        budget: int = 1_000_000,
        probe_interval: int = 10_000,
        probe_episodes: int = 20,
        random_state: int = 0,
    ):
        self.hidden = hidden
        self.n_steps = n_steps
        self.epochs = epochs
        self.minibatch = minibatch
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.clip = clip
        self.ent_coef = ent_coef
        self.vf_coef = vf_coef
        self.lr = lr
        self.budget = budget
        self.probe_interval = probe_interval
        self.probe_episodes = probe_episodes
        self.random_state = random_state

    def _scores(self, X: np.ndarray) -> np.ndarray:
        # argmax of the softmax equals argmax of the logits
        return self.policy_net_(X)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        return np.exp(log_softmax(self.policy_net_(X)))

    def _snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self.policy_net_.flat.copy(), self.value_net_.flat.copy()

    def _restore(self, snapshot: tuple[np.ndarray, np.ndarray]) -> None:
        self.policy_net_.flat[...] = snapshot[0]
        self.value_net_.flat[...] = snapshot[1]

    def fit(self, task: TrainingTask) -> "PPOAgent":
        self._check_budget()
        d, n_actions = _env_dims(task)
        self._begin(task, d, n_actions)
        init_rng = make_rng(self.random_state, _INIT_STREAM)
        self.policy_net_ = policy = Mlp.glorot([d, *self.hidden, n_actions], init_rng)
        self.value_net_ = value = Mlp.glorot([d, *self.hidden, 1], init_rng)
        opt_pi = Adam(len(policy.flat), lr=self.lr)
        opt_v = Adam(len(value.flat), lr=self.lr)
        rng = make_rng(self.random_state, _EXPLORE_STREAM)
        col = _Collector(task, self.random_state)
        budget = int(self.budget)
        n = int(self.n_steps)
        X = np.zeros((n, d))
        actions = np.zeros(n, dtype=np.int64)
        logps = np.zeros(n)
        rewards = np.zeros(n)
        dones = np.zeros(n)
        values = np.zeros(n + 1)
        losses: list[float] = []
        probed_at = None
        step = 0
        while step < budget:
            T = min(n, budget - step)
            for t in range(T):
                x = col.x
                logp_all = log_softmax(policy(x))
                cdf = np.cumsum(np.exp(logp_all))
                a = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), n_actions - 1)
                X[t] = x
                actions[t] = a
                logps[t] = logp_all[a]
                values[t] = value(x)[0]
                _, _, rewards[t], _, done = col.step(a)
                dones[t] = float(done)
            values[T] = value(col.x)[0]
            adv, ret = gae(rewards[:T], values[: T + 1], dones[:T], self.gamma, self.gae_lambda)
            prev = step
            step += T
            rollout = Rollout(X[:T].copy(), actions[:T].copy(), logps[:T].copy(), adv, ret)
            stats = ppo_update(
                policy, value, rollout, opt_pi, opt_v, rng,
                clip=self.clip, epochs=int(self.epochs), minibatch=int(self.minibatch),
                ent_coef=self.ent_coef, vf_coef=self.vf_coef,
            )
            losses.append(stats["policy_loss"] + stats["value_loss"])
            if step // self.probe_interval > prev // self.probe_interval:
                rate = self._probe(task, step)
                probed_at = step
                self._epoch(col, step, losses, rate)
                if rate is not None and rate >= task.threshold:
                    self.training_stats_.stopped_early = True
                    break
        if probed_at != step:
            self._epoch(col, step, losses, self._probe(task, step))
        self._finish(step)
        return self


AGENTS: dict[str, type[BaseAgent]] = {
    "qtable": QLearningAgent,
    "dqn": DQNAgent,
    "ppo": PPOAgent,
}
