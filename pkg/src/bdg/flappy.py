"""Deterministic tick-based Flappy Bird and a breadth-first feasibility oracle.

Coordinates are screen pixels with y pointing down.  The bird is a 24x24
box centred at x=60; the ground's top edge is at y=400 and the ceiling at
y=0.  Pipe ``i`` (1-based) starts with its left edge at ``288 + 160*(i-1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .binding import DEFAULT_STEPS, StepRegistry
from .env import Env, EnvConfig, EpisodeOutcome, FeatureSpec, Observation, RewardSpec, register_env
from .errors import BudgetExceeded, InvalidConfig

WORLD_WIDTH = 288
WORLD_HEIGHT = 512
GROUND_HEIGHT = 112
GROUND_Y = WORLD_HEIGHT - GROUND_HEIGHT
BIRD_X = 60
BIRD_SIZE = 24
HALF_BIRD = BIRD_SIZE // 2
PIPE_WIDTH = 52
PIPE_SPACING = 160
FIRST_PIPE_X = WORLD_WIDTH
START_Y = 256
NO_PIPE_DX = 1000.0
GAP_CLEARANCE = 10
CLEAR_MARGIN = 10

CHANNELS = ("bird_y", "bird_vy", "next_pipe_dx", "next_pipe_gap_y", "next2_pipe_gap_y")
POSITIONS = ("lowest", "middle", "highest")
ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth")

_NUMERIC = {
    "pipe_count": 2,
    "gap_height": 100.0,
    "scroll_speed": 3.0,
    "gravity": 1.0,
    "flap_velocity": -8.0,
    "terminal_velocity": 10.0,
}


def resolve_position(position: str | float, gap_height: float) -> float:
    """Gap centre y for a symbolic or numeric pipe position."""
    if isinstance(position, str):
        if position == "lowest":
            return GROUND_Y - (gap_height / 2 + GAP_CLEARANCE)
        if position == "highest":
            return gap_height / 2 + GAP_CLEARANCE
        if position == "middle":
            return GROUND_Y / 2
        raise ValueError(f"unknown position {position!r} (expected one of {', '.join(POSITIONS)})")
    return float(position)


@dataclass(frozen=True)
class FlappyConfig:
    pipe_gap_centers: tuple[float, ...]
    gap_height: float = 100.0
    scroll_speed: float = 3.0
    gravity: float = 1.0
    flap_velocity: float = -8.0
    terminal_velocity: float = 10.0
    episode_cap: int | None = None

    @property
    def pipe_count(self) -> int:
        return len(self.pipe_gap_centers)

    @classmethod
    def from_env_config(cls, config: EnvConfig) -> "FlappyConfig":
        params = dict(config.parameters)
        values: dict[str, float] = {}
        for name, default in _NUMERIC.items():
            raw = params.pop(name, default)
            if isinstance(raw, bool) or not isinstance(raw, (int, float)) or not math.isfinite(raw):
                raise InvalidConfig(name, f"must be a finite number, got {raw!r}")
            values[name] = raw
        cap = params.pop("episode_cap", config.episode_cap)
        pipe_count = values.pop("pipe_count")
        if not float(pipe_count).is_integer() or pipe_count < 0:
            raise InvalidConfig("pipe_count", "must be a non-negative integer")
        pipe_count = int(pipe_count)
        if values["gap_height"] <= 0:
            raise InvalidConfig("gap_height", "must be > 0")
        if values["scroll_speed"] <= 0:
            raise InvalidConfig("scroll_speed", "must be > 0")
        positions: list[str | float] = ["middle"] * pipe_count
        for name in list(params):
            if name.startswith("pipe") and name[4:].isdigit():
                index = int(name[4:])
                if not 1 <= index <= pipe_count:
                    raise InvalidConfig(name, f"course has {pipe_count} pipes")
                positions[index - 1] = params.pop(name)
        if params:
            raise InvalidConfig(sorted(params)[0], "unknown parameter")
        centers = []
        for i, pos in enumerate(positions, start=1):
            if isinstance(pos, bool) or not isinstance(pos, (str, int, float)):
                raise InvalidConfig(f"pipe{i}", f"bad position {pos!r}")
            try:
                center = resolve_position(pos, values["gap_height"])
            except ValueError as exc:
                raise InvalidConfig(f"pipe{i}", str(exc)) from None
            if not math.isfinite(center):
                raise InvalidConfig(f"pipe{i}", "position must be finite")
            centers.append(center)
        if cap is not None and (isinstance(cap, bool) or not isinstance(cap, int) or cap < 1):
            raise InvalidConfig("episode_cap", f"must be an integer >= 1, got {cap!r}")
        return cls(tuple(centers), episode_cap=cap, **values)

    def pipe_x0(self, index: int) -> float:
        return FIRST_PIPE_X + PIPE_SPACING * index

    def clear_tick(self) -> int:
        """First tick at which every pipe is fully behind the bird."""
        if not self.pipe_gap_centers:
            return 0
        last = self.pipe_x0(self.pipe_count - 1)
        return math.ceil((last + PIPE_WIDTH - (BIRD_X - HALF_BIRD)) / self.scroll_speed)

    def default_cap(self) -> int:
        if self.episode_cap is not None:
            return self.episode_cap
        if not self.pipe_gap_centers:
            return 100
        return self.clear_tick() + CLEAR_MARGIN


@dataclass
class FlappyState:
    bird_y: float
    bird_vy: float
    pipes: list[list[float]]  # [x, gap_center] sorted by x
    tick: int = 0
    passed_count: int = 0


def _advance(state: FlappyState, action: int, cfg: FlappyConfig) -> list[str]:
    """Mutate ``state`` by one tick and return the emitted events."""
    if action == 1:
        vy = cfg.flap_velocity
    else:
        vy = min(state.bird_vy + cfg.gravity, cfg.terminal_velocity)
    y = state.bird_y + vy
    state.bird_y, state.bird_vy = y, vy
    state.tick += 1
    events: list[str] = []
    top, bottom = y - HALF_BIRD, y + HALF_BIRD
    left, right = BIRD_X - HALF_BIRD, BIRD_X + HALF_BIRD
    half_gap = cfg.gap_height / 2
    hit = bottom >= GROUND_Y or top <= 0
    for i, pipe in enumerate(state.pipes):
        old_right = pipe[0] + PIPE_WIDTH
        pipe[0] -= cfg.scroll_speed
        new_right = pipe[0] + PIPE_WIDTH
        if old_right >= BIRD_X > new_right:
            events.append("pipe_passed")
            state.passed_count += 1
        if not hit and right > pipe[0] and left < new_right:
            if top < pipe[1] - half_gap or bottom > pipe[1] + half_gap:
                hit = True
    if hit:
        events.append("collision")
    return events


def _observe(state: FlappyState) -> Observation:
    ahead = [p for p in state.pipes if p[0] + PIPE_WIDTH > BIRD_X - HALF_BIRD]
    middle = GROUND_Y / 2
    return {
        "bird_y": state.bird_y,
        "bird_vy": state.bird_vy,
        "next_pipe_dx": ahead[0][0] - BIRD_X if ahead else NO_PIPE_DX,
        "next_pipe_gap_y": ahead[0][1] if ahead else middle,
        "next2_pipe_gap_y": ahead[1][1] if len(ahead) > 1 else middle,
    }


def initial_state(cfg: FlappyConfig) -> FlappyState:
    pipes = [[cfg.pipe_x0(i), c] for i, c in enumerate(cfg.pipe_gap_centers)]
    return FlappyState(float(START_Y), 0.0, pipes)


class FlappyEnv(Env):
    env_id = "flappy"
    n_actions = 2
    channels = CHANNELS

    def __init__(self) -> None:
        super().__init__()
        self.cfg: FlappyConfig | None = None
        self.state: FlappyState | None = None

    def default_episode_cap(self, config: EnvConfig) -> int:
        return FlappyConfig.from_env_config(config).default_cap()

    def _reset(self, config: EnvConfig) -> Observation:
        self.cfg = FlappyConfig.from_env_config(config)
        self.state = initial_state(self.cfg)
        return _observe(self.state)

    def _advance(self, action: int) -> tuple[Observation, list[str], bool]:
        assert self.state is not None and self.cfg is not None
        events = _advance(self.state, action, self.cfg)
        return _observe(self.state), events, "collision" in events

    def load_state(self, bird_y: float, bird_vy: float) -> None:
        """Place the bird mid-episode (used by physics tests)."""
        assert self.state is not None
        self.state.bird_y, self.state.bird_vy = float(bird_y), float(bird_vy)


DEFAULT_FEATURES = FeatureSpec.of(
    ("bird_y", 1 / 200, -1.0),
    ("bird_vy", 1 / 10, 0.0),
    ("next_pipe_dx", 1 / 300, 0.0),
    ("next_pipe_gap_y", 1 / 200, -1.0),
    ("next2_pipe_gap_y", 1 / 200, -1.0),
)
DEFAULT_REWARD = RewardSpec({"pipe_passed": 1.0, "collision": -1.0}, 0.01)

register_env("flappy", FlappyEnv, DEFAULT_FEATURES, DEFAULT_REWARD)


def passes_by_tick(cfg: FlappyConfig, max_ticks: int) -> list[int]:
    """``out[k]`` = pipes passed once ``k`` ticks have run (independent of the bird)."""
    out = [0] * (max_ticks + 1)
    for k in range(1, max_ticks + 1):
        out[k] = sum(
            1 for i in range(cfg.pipe_count) if cfg.pipe_x0(i) + PIPE_WIDTH - cfg.scroll_speed * k < BIRD_X
        )
    return out


def safe_band(cfg: FlappyConfig, tick: int) -> tuple[float, float, float, float]:
    """Bird-centre bounds after ``tick`` ticks as ``(lo, lo_strict, hi, hi_strict)``.

    The bird survives the tick iff ``lo_strict < y < hi_strict`` and
    ``lo <= y <= hi`` (ground/ceiling contact is strict, pipe-edge contact is not).
    """
    lo, hi = float("-inf"), float("inf")
    left, right = BIRD_X - HALF_BIRD, BIRD_X + HALF_BIRD
    half_gap = cfg.gap_height / 2
    for i, center in enumerate(cfg.pipe_gap_centers):
        x = cfg.pipe_x0(i) - cfg.scroll_speed * tick
        if right > x and left < x + PIPE_WIDTH:
            lo = max(lo, center - half_gap + HALF_BIRD)
            hi = min(hi, center + half_gap - HALF_BIRD)
    return lo, float(HALF_BIRD), hi, float(GROUND_Y - HALF_BIRD)


def solve_feasible(
    config: EnvConfig | FlappyConfig,
    max_ticks: int | None = None,
    target_pipes: int | None = None,
    max_states: int = 2_000_000,
) -> list[int] | None:
    """Breadth-first search for an action sequence passing ``target_pipes``.

    States are deduplicated per tick on rounded ``(y, vy)``, which is exact for
    integer-valued physics.  Returns the witness, or ``None`` if no sequence of
    at most ``max_ticks`` actions gets there.  Raises :class:`BudgetExceeded`
    when more than ``max_states`` states would be stored.
    """
    cfg = config if isinstance(config, FlappyConfig) else FlappyConfig.from_env_config(config)
    target = cfg.pipe_count if target_pipes is None else target_pipes
    if target <= 0:
        return []
    if target > cfg.pipe_count:
        return None
    if max_ticks is None:
        max_ticks = cfg.default_cap()
    passes = passes_by_tick(cfg, max_ticks)
    gravity, flap, vmax = cfg.gravity, cfg.flap_velocity, cfg.terminal_velocity

    layer: dict[tuple[int, int], tuple[float, float]] = {(START_Y, 0): (float(START_Y), 0.0)}
    parents: list[dict[tuple[int, int], tuple[tuple[int, int], int]]] = []
    stored = 1
    for tick in range(1, max_ticks + 1):
        lo, lo_strict, hi, hi_strict = safe_band(cfg, tick)
        nxt: dict[tuple[int, int], tuple[float, float]] = {}
        back: dict[tuple[int, int], tuple[tuple[int, int], int]] = {}
        for key, (y, vy) in layer.items():
            for action in (0, 1):
                nvy = flap if action == 1 else min(vy + gravity, vmax)
                ny = y + nvy
                if not (lo_strict < ny < hi_strict and lo <= ny <= hi):
                    continue
                nkey = (round(ny), round(nvy))
                if nkey in nxt:
                    continue
                nxt[nkey] = (ny, nvy)
                back[nkey] = (key, action)
        if not nxt:
            return None
        parents.append(back)
        if passes[tick] >= target:
            return _walk_back(parents, next(iter(nxt)))
        stored += len(nxt)
        if stored > max_states:
            raise BudgetExceeded(f"more than {max_states} states explored by tick {tick}")
        layer = nxt
    return None


def _walk_back(parents: list[dict], key: tuple[int, int]) -> list[int]:
    actions: list[int] = []
    for back in reversed(parents):
        key, action = back[key]
        actions.append(action)
    actions.reverse()
    return actions


def replay(config: EnvConfig, actions: list[int]) -> EpisodeOutcome:
    """Run ``actions`` through a fresh :class:`FlappyEnv` (stops early on done)."""
    from collections import Counter

    env = FlappyEnv()
    obs = env.reset(config, 0)
    events: Counter = Counter()
    tick = 0
    for a in actions:
        if env.done:
            break
        tr = env.step(a)
        events.update(tr.events)
        obs, tick = tr.obs, tr.tick
    return EpisodeOutcome(events, 0.0, tick, obs)


# --- step definitions -------------------------------------------------------


def _pipe_index(ordinal: str) -> int:
    try:
        return ORDINALS.index(ordinal.lower()) + 1
    except ValueError:
        raise ValueError(f"unknown ordinal {ordinal!r}") from None


def _checked_position(position: str) -> str:
    if position not in POSITIONS:
        raise ValueError(f"unknown position {position!r} (expected one of {', '.join(POSITIONS)})")
    return position


def register_steps(steps: StepRegistry) -> None:
    @steps.given("the Flappy Bird game")
    def flappy_game(config: EnvConfig) -> EnvConfig:
        return EnvConfig("flappy", dict(config.parameters), config.episode_cap)

    @steps.given("a course of {int} pipes")
    def course(config: EnvConfig, count: int) -> EnvConfig:
        return config.with_parameter("pipe_count", count)

    @steps.given("a pipe gap of {int} pixels")
    def gap(config: EnvConfig, height: int) -> EnvConfig:
        return config.with_parameter("gap_height", height)

    @steps.given("an episode cap of {int} ticks")
    def cap(config: EnvConfig, ticks: int) -> EnvConfig:
        return config.with_cap(ticks)

    @steps.when("the {word} pipe is at the {word} position")
    def pipe_at(config: EnvConfig, ordinal: str, position: str) -> EnvConfig:
        return config.with_parameter(f"pipe{_pipe_index(ordinal)}", _checked_position(position))

    @steps.when("the {word} pipe gap is centered at {float}")
    def pipe_centered(config: EnvConfig, ordinal: str, center: float) -> EnvConfig:
        return config.with_parameter(f"pipe{_pipe_index(ordinal)}", center)

    @steps.when("all pipes are at the {word} position")
    def all_pipes(config: EnvConfig, position: str) -> EnvConfig:
        position = _checked_position(position)
        count = int(config.parameters.get("pipe_count", _NUMERIC["pipe_count"]))
        for i in range(1, count + 1):
            config = config.with_parameter(f"pipe{i}", position)
        return config

    @steps.when("the pipe gap is {int} pixels")
    def gap_now(config: EnvConfig, height: int) -> EnvConfig:
        return config.with_parameter("gap_height", height)

    @steps.then("the bird passes {int} pipes", oracle_target="pipes")
    def passes(outcome: EpisodeOutcome, count: int) -> bool:
        return outcome.count("pipe_passed") >= count

    @steps.then("the bird does not collide")
    def no_collision(outcome: EpisodeOutcome) -> bool:
        return outcome.count("collision") == 0


def flappy_registry() -> StepRegistry:
    """A fresh registry holding only the Flappy Bird steps."""
    reg = StepRegistry()
    register_steps(reg)
    return reg


register_steps(DEFAULT_STEPS)


def oracle_target(assertions) -> int | None:
    """Pipes the scenario asserts, read from assertion metadata."""
    targets = [int(a.values[0]) for a in assertions if a.binding.meta.get("oracle_target") == "pipes"]
    return max(targets) if targets else None


def summarize(config: EnvConfig) -> Mapping[str, object]:
    cfg = FlappyConfig.from_env_config(config)
    return {"pipes": list(cfg.pipe_gap_centers), "gap_height": cfg.gap_height, "episode_cap": cfg.default_cap()}
