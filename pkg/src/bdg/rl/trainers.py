"""Trainer registry: named algorithm + hyperparameter bundles selectable by tag."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

from sklearn.base import clone

from ..env import Env, EnvConfig, EpisodeOutcome, FeatureSpec, Observation, RewardSpec, Transition, get_env
from .agents import AGENTS, BaseAgent, TrainingStats, TrainingTask

FeatureFn = Callable[[Observation], Any]
RewardFn = Callable[[Transition], float]


@dataclass(frozen=True)
class TrainerSpec:
    """What a trainer file declares.

    ``features``/``reward`` may be declarative specs or arbitrary callables;
    ``None`` means "use the environment's defaults".
    """

    trainer_id: str
    algorithm: str
    params: Mapping[str, Any] = field(default_factory=dict)
    features: FeatureSpec | FeatureFn | None = None
    reward: RewardSpec | RewardFn | None = None

    def __post_init__(self) -> None:
        if self.algorithm not in AGENTS:
            raise ValueError(f"unknown algorithm {self.algorithm!r} (known: {', '.join(AGENTS)})")
        self.make_agent(0)

    @property
    def budget(self) -> int:
        return int(self.make_agent(0).budget)

    def make_agent(self, seed: int) -> BaseAgent:
        agent = AGENTS[self.algorithm]()
        agent.set_params(**dict(self.params), random_state=seed)
        _validate(agent)
        return agent

    def with_params(self, **params: Any) -> "TrainerSpec":
        merged = {**self.params, **{k: v for k, v in params.items() if v is not None}}
        return replace(self, params=merged)


def _validate(agent: BaseAgent) -> None:
    p = agent.get_params()
    if int(p["budget"]) < 1:
        raise ValueError("budget must be >= 1")
    if not 0.0 <= p["gamma"] <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    for name in ("probe_interval", "probe_episodes", "batch_size", "buffer_size", "target_sync", "n_steps", "epochs", "minibatch", "train_freq"):
        if name in p and int(p[name]) < 1:
            raise ValueError(f"{name} must be >= 1")
    for name in ("lr", "alpha", "bin_width", "clip"):
        if name in p and not p[name] > 0:
            raise ValueError(f"{name} must be > 0")


TRAINERS: dict[str, TrainerSpec] = {}


def register_trainer(spec: TrainerSpec) -> TrainerSpec:
    TRAINERS[spec.trainer_id] = spec
    return spec


register_trainer(TrainerSpec("dqn_default", "dqn"))
register_trainer(TrainerSpec("ppo_default", "ppo"))
register_trainer(TrainerSpec("qtable_default", "qtable"))


def resolve_specs(env_id: str, spec: TrainerSpec) -> tuple[FeatureFn, RewardFn]:
    entry = get_env(env_id)
    return spec.features or entry.features, spec.reward or entry.reward


def train(
    make_env: Callable[[], Env],
    config: EnvConfig,
    spec: TrainerSpec,
    seed: int,
    success: Callable[[EpisodeOutcome], bool] | None = None,
    threshold: float = 0.95,
) -> tuple[BaseAgent, TrainingStats]:
    """Fit the trainer's agent on one configured environment."""
    features, reward = resolve_specs(config.env_id, spec)
    task = TrainingTask(make_env, config, features, reward, success, threshold)
    agent = clone(spec.make_agent(seed)).fit(task)
    return agent, agent.training_stats_
