"""Step definitions and scenario binding.

A step definition pairs a pattern such as ``"the bird passes {int} pipes"``
with a handler.  The keyword fixes what the handler does:

* ``Given`` steps set up the environment (``EnvConfig -> EnvConfig``),
* ``When`` steps put the game into a situation by editing the configuration
  before the episode starts (``EnvConfig -> EnvConfig``),
* ``Then`` steps are assertions over a finished episode
  (``EpisodeOutcome -> bool``).

``bind_scenario`` turns a parsed scenario into an :class:`ExecutablePlan`.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Collection, Iterable, Mapping

from .env import ENVIRONMENTS, EnvConfig, EpisodeOutcome
from .errors import (
    AdjacentPlaceholders,
    AmbiguousStep,
    BindingError,
    RegistrationError,
    UnboundStep,
    UnknownPlaceholderType,
)
from .gherkin import DataTable, Diagnostic, Scenario, Severity, SourceSpan, Step, StepKeyword

DEFAULT_TRAINER = "dqn_default"
DEFAULT_THRESHOLD = 0.95

_PLACEHOLDERS = {
    "int": r"(-?[0-9]+)",
    "float": r"(-?[0-9]+(?:\.[0-9]+)?)",
    "word": r"(\S+)",
    "string": r'"([^"]*)"',
}
_PLACEHOLDER_RE = re.compile(r"\{([^{}]*)\}")


class StepKind(str, enum.Enum):
    ENV_SETUP = "EnvSetup"
    SITUATION_MUTATION = "SituationMutation"
    ASSERTION = "Assertion"


KIND_FOR_KEYWORD = {
    StepKeyword.GIVEN: StepKind.ENV_SETUP,
    StepKeyword.WHEN: StepKind.SITUATION_MUTATION,
    StepKeyword.THEN: StepKind.ASSERTION,
}


@dataclass(frozen=True)
class StepArg:
    kind: str
    value: int | float | str


@dataclass(frozen=True)
class StepPattern:
    text: str
    slots: tuple[str, ...]
    regex: re.Pattern = field(compare=False, repr=False)

    def match(self, step_text: str) -> list[StepArg] | None:
        return match_step(self, step_text)


def _normalize(text: str) -> str:
    return " ".join(text.split())


def compile_pattern(text: str) -> StepPattern:
    if not text or not text.strip():
        raise ValueError("step pattern must not be empty")
    text = _normalize(text)
    parts: list[str] = []
    slots: list[str] = []
    pos = 0
    last_end = None
    for m in _PLACEHOLDER_RE.finditer(text):
        name = m.group(1)
        if name not in _PLACEHOLDERS:
            raise UnknownPlaceholderType(f"unknown placeholder {{{name}}} in {text!r}")
        if last_end is not None and m.start() == last_end:
            raise AdjacentPlaceholders(f"placeholders at column {m.start() + 1} of {text!r} need a literal separator")
        parts.append(re.escape(text[pos : m.start()]))
        parts.append(_PLACEHOLDERS[name])
        slots.append(name)
        pos = last_end = m.end()
    parts.append(re.escape(text[pos:]))
    if "{" in text[pos:] or "}" in text[pos:]:
        raise UnknownPlaceholderType(f"unbalanced brace in {text!r}")
    return StepPattern(text, tuple(slots), re.compile("".join(parts)))


def match_step(pattern: StepPattern, step_text: str) -> list[StepArg] | None:
    m = pattern.regex.fullmatch(_normalize(step_text))
    if m is None:
        return None
    args = []
    for kind, raw in zip(pattern.slots, m.groups()):
        value: int | float | str
        if kind == "int":
            value = int(raw)
        elif kind == "float":
            value = float(raw)
        else:
            value = raw
        args.append(StepArg(kind, value))
    return args


@dataclass(frozen=True)
class StepBinding:
    keyword: StepKeyword
    pattern: StepPattern
    kind: StepKind
    handler: Callable[..., Any]
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False)


def _levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


class StepRegistry:
    """Step definitions keyed by (keyword, pattern text)."""

    def __init__(self) -> None:
        self._bindings: dict[tuple[StepKeyword, str], StepBinding] = {}

    def __len__(self) -> int:
        return len(self._bindings)

    def __iter__(self):
        return iter(self._bindings.values())

    def register(
        self,
        keyword: StepKeyword | str,
        pattern: str,
        handler: Callable[..., Any],
        kind: StepKind | None = None,
        **meta: Any,
    ) -> StepBinding:
        keyword = StepKeyword(keyword)
        if keyword.is_conjunction:
            raise RegistrationError("register steps under Given, When or Then")
        expected = KIND_FOR_KEYWORD[keyword]
        if kind is not None and StepKind(kind) is not expected:
            raise RegistrationError(f"{keyword.value} steps must be {expected.value}, not {StepKind(kind).value}")
        compiled = compile_pattern(pattern)
        key = (keyword, compiled.text)
        if key in self._bindings:
            raise RegistrationError(f"duplicate step definition {keyword.value} {compiled.text!r}")
        binding = StepBinding(keyword, compiled, expected, handler, dict(meta))
        self._bindings[key] = binding
        return binding

    def _decorator(self, keyword: StepKeyword, pattern: str, meta: dict[str, Any]):
        def deco(fn):
            self.register(keyword, pattern, fn, **meta)
            return fn

        return deco

    def given(self, pattern: str, **meta: Any):
        return self._decorator(StepKeyword.GIVEN, pattern, meta)

    def when(self, pattern: str, **meta: Any):
        return self._decorator(StepKeyword.WHEN, pattern, meta)

    def then(self, pattern: str, **meta: Any):
        return self._decorator(StepKeyword.THEN, pattern, meta)

    def resolve(self, step: Step) -> tuple[StepBinding, list[StepArg]]:
        candidates = [b for b in self._bindings.values() if b.keyword is step.resolved]
        hits = [(b, args) for b in candidates if (args := match_step(b.pattern, step.text)) is not None]
        if len(hits) == 1:
            return hits[0]
        if not hits:
            text = _normalize(step.text)
            nearest = sorted(candidates, key=lambda b: (_levenshtein(text, b.pattern.text), b.pattern.text))[:3]
            hint = ", ".join(repr(b.pattern.text) for b in nearest) or "none registered"
            raise UnboundStep(f"no {step.resolved.value} step matches {step.text!r}; nearest: {hint}")
        listed = ", ".join(repr(b.pattern.text) for b, _ in hits)
        raise AmbiguousStep(f"{step.resolved.value} {step.text!r} matches {len(hits)} definitions: {listed}")


DEFAULT_STEPS = StepRegistry()
"""Registry that ``given/when/then`` below and the bundled step files use."""

given = DEFAULT_STEPS.given
when = DEFAULT_STEPS.when
then = DEFAULT_STEPS.then


@dataclass(frozen=True)
class BoundStep:
    binding: StepBinding
    args: tuple[StepArg, ...]
    text: str
    table: DataTable | None = None

    @property
    def values(self) -> tuple[Any, ...]:
        vals = tuple(a.value for a in self.args)
        return vals + (self.table,) if self.table is not None else vals

    def __call__(self, target: Any) -> Any:
        return self.binding.handler(target, *self.values)


@dataclass(frozen=True)
class ExecutablePlan:
    feature: str
    scenario: str
    env_id: str
    base_config: EnvConfig
    config_mutations: tuple[BoundStep, ...]
    assertions: tuple[BoundStep, ...]
    trainer_id: str = DEFAULT_TRAINER
    threshold: float = DEFAULT_THRESHOLD
    steps: tuple[tuple[Any, ...], ...] = ()

    def build_config(self, base: EnvConfig | None = None) -> EnvConfig:
        config = base if base is not None else self.base_config
        for mutation in self.config_mutations:
            config = mutation(config)
        return config

    def check(self, outcome: EpisodeOutcome) -> list[bool]:
        return [bool(a(outcome)) for a in self.assertions]

    def succeeded(self, outcome: EpisodeOutcome) -> bool:
        return all(self.check(outcome))

    @property
    def assertion_texts(self) -> list[str]:
        return [a.text for a in self.assertions]

    def canonical(self) -> dict[str, Any]:
        return {
            "feature": self.feature,
            "scenario": self.scenario,
            "env_id": self.env_id,
            "base_config": self.base_config.to_dict(),
            "steps": [list(s) for s in self.steps],
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ScenarioBindingError(BindingError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


def _tag_value(tags: Iterable[str], namespace: str) -> tuple[str, str] | None:
    found = None
    for tag in tags:
        if tag.startswith(f"@{namespace}:"):
            found = (tag, tag.split(":", 1)[1])
    return found


def bind_scenario(
    scenario: Scenario,
    steps: StepRegistry | None = None,
    *,
    feature: str = "",
    feature_tags: Iterable[str] = (),
    envs: Collection[str] | None = None,
    trainers: Collection[str] | None = None,
) -> ExecutablePlan:
    """Resolve every step of ``scenario`` and assemble an executable plan.

    Scenario tags override feature tags.  Raises
    :class:`ScenarioBindingError` with one diagnostic per problem.
    """
    if steps is None:
        steps = DEFAULT_STEPS
    if envs is None:
        envs = ENVIRONMENTS
    if trainers is None:
        from .rl.trainers import TRAINERS

        trainers = TRAINERS
    fallback = scenario.span or SourceSpan("<string>", 1, 1, 0)
    diags: list[Diagnostic] = []

    def error(code: str, message: str, span: SourceSpan | None = None) -> None:
        diags.append(Diagnostic(Severity.ERROR, code, message, span or fallback))

    tags = [*feature_tags, *scenario.tags]
    trainer_id = DEFAULT_TRAINER
    if (hit := _tag_value(tags, "trainer")) is not None:
        trainer_id = hit[1]
    if trainer_id not in trainers:
        error("BND005", f"UnknownTrainer: {trainer_id!r} is not registered (known: {', '.join(sorted(trainers))})")
    threshold = DEFAULT_THRESHOLD
    if (hit := _tag_value(tags, "threshold")) is not None:
        try:
            threshold = float(hit[1])
            if not 0.0 < threshold <= 1.0:
                raise ValueError
        except ValueError:
            error("BND006", f"InvalidTag: {hit[0]} must be a number in (0, 1]")
    env_tag = _tag_value(tags, "env")
    config = EnvConfig(env_tag[1] if env_tag else "")

    mutations: list[BoundStep] = []
    assertions: list[BoundStep] = []
    for step in scenario.steps:
        try:
            binding, args = steps.resolve(step)
        except UnboundStep as exc:
            error("BND001", f"UnboundStep: {exc}", step.span)
            continue
        except AmbiguousStep as exc:
            error("BND002", f"AmbiguousStep: {exc}", step.span)
            continue
        bound = BoundStep(binding, tuple(args), step.text, step.table)
        if binding.kind is StepKind.ENV_SETUP:
            try:
                config = bound(config)
            except Exception as exc:
                error("BND007", f"StepFailed: {step.text!r}: {exc}", step.span)
        elif binding.kind is StepKind.SITUATION_MUTATION:
            mutations.append(bound)
        else:
            assertions.append(bound)
    if not assertions:
        error("BND003", f"MissingAssertion: scenario {scenario.name!r} has no Then step bound to an assertion")
    if not config.env_id:
        error("BND004", f"MissingEnvironment: scenario {scenario.name!r} selects no environment (Given step or @env tag)")
    elif config.env_id not in envs:
        error("BND004", f"MissingEnvironment: {config.env_id!r} is not a registered environment")
    plan = ExecutablePlan(
        feature=feature,
        scenario=scenario.name,
        env_id=config.env_id,
        base_config=config,
        config_mutations=tuple(mutations),
        assertions=tuple(assertions),
        trainer_id=trainer_id,
        threshold=threshold,
        steps=tuple(
            (s.resolved.value, _normalize(s.text), [list(r) for r in s.table.rows] if s.table else None)
            for s in scenario.steps
        ),
    )
    if not diags:
        # Mutations must apply cleanly to the base config.
        try:
            plan.build_config()
        except Exception as exc:
            error("BND007", f"StepFailed: {exc}")
    if diags:
        raise ScenarioBindingError(diags)
    return plan
