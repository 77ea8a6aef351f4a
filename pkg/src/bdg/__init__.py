"""Behaviour-driven game testing with reinforcement-learning agents."""

from . import flappy  # noqa: F401  registers the flappy env and its steps
from .binding import DEFAULT_STEPS, ExecutablePlan, StepRegistry, bind_scenario, given, then, when
from .env import EnvConfig, FeatureSpec, RewardSpec, register_env
from .gherkin import FeatureAst, lint, parse_feature, parse_file, pretty_print

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_STEPS",
    "EnvConfig",
    "ExecutablePlan",
    "FeatureAst",
    "FeatureSpec",
    "RewardSpec",
    "StepRegistry",
    "bind_scenario",
    "given",
    "lint",
    "parse_feature",
    "parse_file",
    "pretty_print",
    "register_env",
    "then",
    "when",
]
