"""Environment contract, feature extraction and reward evaluation.

Environments only report what happened (observations and named events).
Rewards are computed on the framework side from those events, so the same
game can be trained against different reward functions without touching it.
"""

from __future__ import annotations

import abc
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .errors import ActionOutOfRange, EpisodeFinished, InvalidConfig, MissingChannel, UnknownEnvironment

Observation = dict[str, float]
Scalar = int | float | str

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Independent 64-bit seed for sub-stream ``stream`` of run ``seed``."""
    return splitmix64((splitmix64(seed & _MASK64) ^ (stream & _MASK64)) & _MASK64)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, stream)))


@dataclass(frozen=True)
class EnvConfig:
    env_id: str
    parameters: Mapping[str, Scalar] = field(default_factory=dict)
    episode_cap: int | None = None

    def with_parameter(self, name: str, value: Scalar) -> "EnvConfig":
        params = dict(self.parameters)
        params[name] = value
        return replace(self, parameters=params)

    def with_cap(self, episode_cap: int) -> "EnvConfig":
        return replace(self, episode_cap=episode_cap)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"env_id": self.env_id, "parameters": dict(self.parameters)}
        if self.episode_cap is not None:
            out["episode_cap"] = self.episode_cap
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EnvConfig":
        return cls(data["env_id"], dict(data.get("parameters", {})), data.get("episode_cap"))


@dataclass(frozen=True)
class Transition:
    obs: Observation
    events: tuple[str, ...]
    done: bool
    tick: int
    reward: float = 0.0

    def event_counts(self) -> Counter:
        return Counter(self.events)


class Env(abc.ABC):
    """Single-episode state machine: ``reset`` then ``step`` until done.

    Subclasses implement ``_reset`` and ``_advance``; the base class enforces
    the tick counter, the episode cap and the absorbing ``done`` state.
    """

    env_id: str = ""
    n_actions: int = 2
    channels: tuple[str, ...] = ()

    def __init__(self) -> None:
        self._done = True
        self._tick = 0
        self._cap = 0
        self.rng: np.random.Generator | None = None

    @property
    def done(self) -> bool:
        return self._done

    @property
    def tick(self) -> int:
        return self._tick

    @property
    def episode_cap(self) -> int:
        return self._cap

    def reset(self, config: EnvConfig, seed: int = 0) -> Observation:
        if config.env_id != self.env_id:
            raise InvalidConfig("env_id", f"expected {self.env_id!r}, got {config.env_id!r}")
        cap = config.episode_cap if config.episode_cap is not None else self.default_episode_cap(config)
        if not isinstance(cap, int) or isinstance(cap, bool) or cap < 1:
            raise InvalidConfig("episode_cap", f"must be an integer >= 1, got {cap!r}")
        self.rng = make_rng(seed)
        obs = self._reset(config)
        self._cap = cap
        self._tick = 0
        self._done = False
        return obs

    def step(self, action: int) -> Transition:
        if self._done:
            raise EpisodeFinished()
        if isinstance(action, bool) or not isinstance(action, (int, np.integer)) or not 0 <= action < self.n_actions:
            raise ActionOutOfRange(f"action {action!r} not in [0, {self.n_actions})")
        obs, events, terminal = self._advance(int(action))
        self._tick += 1
        self._done = terminal or self._tick >= self._cap
        return Transition(obs, tuple(events), self._done, self._tick)

    def default_episode_cap(self, config: EnvConfig) -> int:
        return 1000

    @abc.abstractmethod
    def _reset(self, config: EnvConfig) -> Observation: ...

    @abc.abstractmethod
    def _advance(self, action: int) -> tuple[Observation, list[str], bool]: ...


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered ``(channel, scale, offset)`` triples; feature i is ``scale*obs[channel] + offset``."""

    channels: tuple[tuple[str, float, float], ...] = ()

    @classmethod
    def of(cls, *items: tuple[str, float, float]) -> "FeatureSpec":
        return cls(tuple((str(c), float(a), float(b)) for c, a, b in items))

    @property
    def dim(self) -> int:
        return len(self.channels)

    def __call__(self, obs: Mapping[str, float]) -> np.ndarray:
        return feature_extract(obs, self)

    def to_list(self) -> list[dict[str, Any]]:
        return [{"channel": c, "scale": a, "offset": b} for c, a, b in self.channels]

    @classmethod
    def from_list(cls, items: Iterable[Mapping[str, Any]]) -> "FeatureSpec":
        return cls.of(*((i["channel"], i.get("scale", 1.0), i.get("offset", 0.0)) for i in items))


def feature_extract(obs: Mapping[str, float], spec: FeatureSpec) -> np.ndarray:
    out = np.empty(len(spec.channels), dtype=np.float64)
    for i, (name, scale, offset) in enumerate(spec.channels):
        try:
            value = obs[name]
        except KeyError:
            raise MissingChannel(name) from None
        out[i] = scale * value + offset
    return out


@dataclass(frozen=True)
class RewardSpec:
    weights: Mapping[str, float] = field(default_factory=dict)
    living_bonus: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(w) for w in self.weights.values()) or not math.isfinite(self.living_bonus):
            raise ValueError("reward weights must be finite")

    def __call__(self, transition: Transition) -> float:
        return reward_eval(transition, self)

    def to_dict(self) -> dict[str, Any]:
        return {"weights": dict(self.weights), "living_bonus": self.living_bonus}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RewardSpec":
        return cls({k: float(v) for k, v in data.get("weights", {}).items()}, float(data.get("living_bonus", 0.0)))


def reward_eval(transition: Transition, spec: RewardSpec) -> float:
    total = 0.0
    for event in transition.events:
        total += spec.weights.get(event, 0.0)
    if not transition.done:
        total += spec.living_bonus
    return total


@dataclass
class EpisodeOutcome:
    """Summary of one finished episode, handed to assertions."""

    events: Counter
    episodic_return: float
    ticks: int
    final_obs: Observation

    def count(self, event: str) -> int:
        return self.events.get(event, 0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "events": dict(sorted(self.events.items())),
            "return": self.episodic_return,
            "ticks": self.ticks,
        }


def run_episode(
    env: Env,
    config: EnvConfig,
    seed: int,
    act: Callable[[Observation], int],
    reward: Callable[[Transition], float] | None = None,
) -> EpisodeOutcome:
    obs = env.reset(config, seed)
    events: Counter = Counter()
    ret = 0.0
    tick = 0
    done = False
    while not done:
        tr = env.step(act(obs))
        events.update(tr.events)
        if reward is not None:
            ret += reward(tr)
        obs, done, tick = tr.obs, tr.done, tr.tick
    return EpisodeOutcome(events, ret, tick, obs)


@dataclass(frozen=True)
class EnvEntry:
    env_id: str
    factory: Callable[[], Env]
    features: FeatureSpec
    reward: RewardSpec


ENVIRONMENTS: dict[str, EnvEntry] = {}


def register_env(env_id: str, factory: Callable[[], Env], features: FeatureSpec, reward: RewardSpec) -> None:
    ENVIRONMENTS[env_id] = EnvEntry(env_id, factory, features, reward)


def get_env(env_id: str) -> EnvEntry:
    try:
        return ENVIRONMENTS[env_id]
    except KeyError:
        raise UnknownEnvironment(f"no environment registered as {env_id!r}") from None


class ChainEnv(Env):
    """Five-cell corridor; walking off the right end scores ``goal``.

    Action 0 moves left (``bump`` at the left wall), action 1 moves right.
    Small and fully enumerable, which makes it the tabular test bed.
    """

    env_id = "chain"
    n_actions = 2
    channels = ("position",)
    n_states = 5

    def __init__(self) -> None:
        super().__init__()
        self.position = 0

    def default_episode_cap(self, config: EnvConfig) -> int:
        return 50

    def _reset(self, config: EnvConfig) -> Observation:
        start = config.parameters.get("start", 0)
        for name in config.parameters:
            if name != "start":
                raise InvalidConfig(name, "unknown parameter")
        if not isinstance(start, int) or not 0 <= start < self.n_states - 1:
            raise InvalidConfig("start", f"must be an integer in [0, {self.n_states - 1})")
        self.position = start
        return {"position": float(self.position)}

    @classmethod
    def transition(cls, state: int, action: int) -> tuple[int, list[str], bool]:
        if action == 1:
            nxt = state + 1
            if nxt == cls.n_states - 1:
                return nxt, ["goal"], True
            return nxt, [], False
        if state == 0:
            return 0, ["bump"], False
        return state - 1, [], False

    def _advance(self, action: int) -> tuple[Observation, list[str], bool]:
        self.position, events, terminal = self.transition(self.position, action)
        return {"position": float(self.position)}, events, terminal


register_env(
    "chain",
    ChainEnv,
    FeatureSpec.of(("position", 1.0, 0.0)),
    RewardSpec({"goal": 1.0, "bump": -0.1}, 0.0),
)
