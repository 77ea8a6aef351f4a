"""Train mode and test mode.

Train mode learns one model per scenario from the scenario's configured
environment and the trainer's reward function.  Test mode replays a stored
model greedily for K episodes and checks the scenario's ``Then`` assertions
in each; the verdict is Pass when the success rate reaches the threshold.

A Fail means the trained agent did not reliably reach the outcome within its
training budget.  It is not a proof that the outcome is impossible; use
:func:`oracle_mode` for that on deterministic environments.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import tomli

from .binding import ExecutablePlan, ScenarioBindingError, bind_scenario
from .env import EnvConfig, FeatureSpec, RewardSpec, get_env, run_episode
from .errors import BdgError, FingerprintMismatch, MissingModel, NoScenarioSelected, NumericError
from .gherkin import Diagnostic, FeatureAst, GherkinSyntaxError, Scenario, Severity, lint, parse_file
from .modelio import atomic_write, created_at, load_model, save_model
from .report import ERROR, FAIL, NOT_ACHIEVED, EpisodeRecord, EvalStats, ScenarioResult, TestReport, verdict
from .rl.trainers import TRAINERS, TrainerSpec, resolve_specs, train

log = logging.getLogger("bdg")

DEFAULT_EPISODES = 100
MODEL_SUFFIX = ".bdgm"


class DiagnosticsError(BdgError):
    """Parse, lint or binding errors that prevent a run (exit code 2)."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


@dataclass
class RunConfig:
    """Contents of the run-configuration TOML file.

    ``[trainer.<id>]`` tables override hyperparameters (a table naming an
    ``algorithm`` defines a new trainer); optional ``features`` array and
    ``reward`` sub-table replace the environment defaults.  ``[env.<id>]``
    tables give parameter defaults that scenarios build on.
    """

    trainers: dict[str, dict[str, Any]] = field(default_factory=dict)
    envs: dict[str, dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        with open(path, "rb") as fh:
            data = tomli.load(fh)
        unknown = set(data) - {"trainer", "env"}
        if unknown:
            raise BdgError(f"{path}: unknown top-level table(s) {sorted(unknown)}")
        return cls(dict(data.get("trainer", {})), dict(data.get("env", {})))

    def trainer(self, trainer_id: str) -> TrainerSpec:
        table = dict(self.trainers.get(trainer_id, {}))
        base = TRAINERS.get(trainer_id)
        algorithm = table.pop("algorithm", None)
        features = table.pop("features", None)
        reward = table.pop("reward", None)
        if base is None:
            if algorithm is None:
                raise BdgError(f"unknown trainer {trainer_id!r}")
            base = TrainerSpec(trainer_id, algorithm)
        elif algorithm is not None and algorithm != base.algorithm:
            base = TrainerSpec(trainer_id, algorithm, features=base.features, reward=base.reward)
        spec = replace(base, params={**base.params, **table})
        if features is not None:
            spec = replace(spec, features=FeatureSpec.from_list(features))
        if reward is not None:
            reward = dict(reward)
            bonus = float(reward.pop("living_bonus", 0.0))
            weights = reward.pop("weights", reward)
            spec = replace(spec, reward=RewardSpec({k: float(v) for k, v in weights.items()}, bonus))
        spec.make_agent(0)
        return spec

    def trainer_ids(self) -> set[str]:
        return set(TRAINERS) | set(self.trainers)

    def apply_env_defaults(self, config: EnvConfig) -> EnvConfig:
        defaults = dict(self.envs.get(config.env_id, {}))
        cap = defaults.pop("episode_cap", None)
        merged = {**defaults, **config.parameters}
        return EnvConfig(config.env_id, merged, config.episode_cap if config.episode_cap is not None else cap)


def resolve_config_path(path: str | Path | None) -> str | Path | None:
    return path if path is not None else os.environ.get("BDG_CONFIG") or None


def load_feature(path: str | Path) -> FeatureAst:
    """Parse and lint; raises :class:`DiagnosticsError` on any error."""
    try:
        ast = parse_file(path)
    except GherkinSyntaxError as exc:
        raise DiagnosticsError(exc.diagnostics) from None
    diags = lint(ast)
    for d in diags:
        if d.severity is Severity.WARNING:
            log.warning("%s", d)
    errors = [d for d in diags if d.severity is Severity.ERROR]
    if errors:
        raise DiagnosticsError(errors)
    return ast


def feature_key(path: str | Path) -> str:
    return Path(path).stem


def slug(name: str) -> str:
    s = re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_.")
    return s or "scenario"


def model_path(out_dir: str | Path, feature_file: str | Path, scenario: str) -> Path:
    return Path(out_dir) / feature_key(feature_file) / f"{slug(scenario)}{MODEL_SUFFIX}"


def select_scenarios(ast: FeatureAst, name: str | None) -> list[Scenario]:
    """Exact name match, else case-insensitive substring; ``None`` selects all."""
    if name is None:
        return list(ast.scenarios)
    exact = [s for s in ast.scenarios if s.name == name]
    if exact:
        return exact
    found = [s for s in ast.scenarios if name.lower() in s.name.lower()]
    if not found:
        raise NoScenarioSelected(f"no scenario matching {name!r} in feature {ast.name!r}")
    return found


def bind(ast: FeatureAst, scenario: Scenario, config: RunConfig, feature: str) -> ExecutablePlan:
    try:
        return bind_scenario(
            scenario,
            feature=feature,
            feature_tags=ast.tags,
            trainers=config.trainer_ids(),
        )
    except ScenarioBindingError as exc:
        raise DiagnosticsError(exc.diagnostics) from None


def scenario_env_config(plan: ExecutablePlan, config: RunConfig) -> EnvConfig:
    return plan.build_config(config.apply_env_defaults(plan.base_config))


@dataclass
class TrainResult:
    feature: str
    scenario: str
    model_path: str | None
    algorithm: str | None = None
    env_steps: int = 0
    best_probe_success: float | None = None
    error: str | None = None
    stats: dict[str, Any] | None = None


def _train_one(
    feature_file: str,
    scenario_name: str,
    out_dir: str,
    seed: int,
    budget: int | None,
    trainer: str | None,
    config_path: str | None,
) -> TrainResult:
    config = RunConfig.load(config_path)
    ast = load_feature(feature_file)
    (scenario,) = [s for s in ast.scenarios if s.name == scenario_name]
    feature = feature_key(feature_file)
    plan = bind(ast, scenario, config, feature)
    if trainer is not None:
        plan = replace(plan, trainer_id=trainer)
    spec = config.trainer(plan.trainer_id)
    if budget is not None:
        spec = spec.with_params(budget=budget)
    env_config = scenario_env_config(plan, config)
    entry = get_env(plan.env_id)
    target = model_path(out_dir, feature_file, scenario.name)
    try:
        agent, stats = train(entry.factory, env_config, spec, seed, plan.succeeded, plan.threshold)
    except NumericError as exc:
        return TrainResult(feature, scenario.name, None, spec.algorithm, error=f"{type(exc).__name__}: {exc}")
    features, _ = resolve_specs(plan.env_id, spec)
    manifest = {
        "fingerprint": plan.fingerprint(),
        "feature": plan.feature,
        "scenario": plan.scenario,
        "env_id": plan.env_id,
        "trainer_id": plan.trainer_id,
        "seed": seed,
        "training_env_steps": stats.env_steps,
        "created_at": created_at(),
        "features": features.to_list() if isinstance(features, FeatureSpec) else None,
    }
    save_model(agent, manifest, target)
    stats_dict = stats.to_dict()
    atomic_write(target.with_suffix(".stats.json"), (json.dumps(stats_dict, indent=2) + "\n").encode())
    log.info("trained %s/%s: %d steps, probe success %s", feature, scenario.name, stats.env_steps, stats.best_probe_success)
    return TrainResult(feature, scenario.name, str(target), spec.algorithm, stats.env_steps, stats.best_probe_success, stats=stats_dict)


def _pool_map(fn: Callable[..., Any], jobs: list[tuple], width: int | None) -> list[Any]:
    width = width or os.cpu_count() or 1
    if width <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(width, len(jobs))) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def train_mode(
    feature_file: str | Path,
    out_dir: str | Path,
    *,
    scenario: str | None = None,
    seed: int = 0,
    budget: int | None = None,
    trainer: str | None = None,
    config_path: str | Path | None = None,
    jobs: int | None = None,
) -> list[TrainResult]:
    """Train and store one model per selected scenario."""
    if budget is not None and budget < 1:
        raise ValueError("budget must be >= 1")
    config_path = resolve_config_path(config_path)
    config = RunConfig.load(config_path)
    ast = load_feature(feature_file)
    selected = select_scenarios(ast, scenario)
    feature = feature_key(feature_file)
    for sc in selected:
        bind(ast, sc, config, feature)  # fail fast before any training
    if trainer is not None:
        config.trainer(trainer)
    job_args = [
        (str(feature_file), sc.name, str(out_dir), seed, budget, trainer, None if config_path is None else str(config_path))
        for sc in selected
    ]
    return _pool_map(_train_one, job_args, jobs)


def _evaluate_one(
    feature_file: str,
    scenario_name: str,
    models_dir: str,
    episodes: int,
    seed: int,
    force: bool,
    config_path: str | None,
) -> ScenarioResult:
    t0 = time.perf_counter()
    feature = feature_key(feature_file)
    config = RunConfig.load(config_path)
    ast = load_feature(feature_file)
    (scenario,) = [s for s in ast.scenarios if s.name == scenario_name]
    try:
        plan = bind(ast, scenario, config, feature)
    except DiagnosticsError as exc:
        return ScenarioResult(feature, scenario.name, ERROR, 0.0, [], reason=str(exc), wall_clock=time.perf_counter() - t0)
    result = ScenarioResult(feature, scenario.name, ERROR, plan.threshold, plan.assertion_texts)
    try:
        path = model_path(models_dir, feature_file, scenario.name)
        if not path.exists():
            raise MissingModel(f"no model at {path}; run `bdg train` first")
        agent, manifest = load_model(path)
        if manifest.get("fingerprint") != plan.fingerprint() and not force:
            raise FingerprintMismatch(f"{path} was trained for a different version of this scenario (retrain or use --force)")
        env_config = scenario_env_config(plan, config)
        entry = get_env(plan.env_id)
        features, reward = resolve_specs(plan.env_id, config.trainer(manifest.get("trainer_id", plan.trainer_id)))
        if manifest.get("features"):
            features = FeatureSpec.from_list(manifest["features"])
        env = entry.factory()
        act = agent.policy(features)
        records = []
        for i in range(episodes):
            outcome = run_episode(env, env_config, seed + i, act, reward)
            checks = plan.check(outcome)
            records.append(
                EpisodeRecord(seed + i, all(checks), dict(sorted(outcome.events.items())), outcome.episodic_return, outcome.ticks, checks)
            )
        stats = EvalStats.from_records(records)
        result.stats = stats
        result.verdict = verdict(stats.success_rate, plan.threshold)
        if result.verdict == FAIL:
            failing = [text for j, text in enumerate(plan.assertion_texts) if not all(r.assertions[j] for r in records)]
            result.reason = (
                f"{NOT_ACHIEVED}: success rate {stats.success_rate:.4f} < threshold {plan.threshold}; "
                f"unmet: {'; '.join(failing or plan.assertion_texts)}"
            )
    except (BdgError, OSError) as exc:
        result.verdict = ERROR
        result.reason = f"{type(exc).__name__}: {exc}"
    result.wall_clock = time.perf_counter() - t0
    return result


def test_mode(
    feature_file: str | Path,
    models_dir: str | Path,
    *,
    episodes: int = DEFAULT_EPISODES,
    scenario: str | None = None,
    seed: int = 0,
    force: bool = False,
    config_path: str | Path | None = None,
    jobs: int | None = None,
) -> TestReport:
    """Evaluate stored models; never writes to ``models_dir``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    t0 = time.perf_counter()
    config_path = resolve_config_path(config_path)
    ast = load_feature(feature_file)
    selected = select_scenarios(ast, scenario)
    job_args = [
        (str(feature_file), sc.name, str(models_dir), episodes, seed, force, None if config_path is None else str(config_path))
        for sc in selected
    ]
    results = _pool_map(_evaluate_one, job_args, jobs)
    return TestReport(results, time.perf_counter() - t0)


test_mode.__test__ = False  # type: ignore[attr-defined]


@dataclass
class OracleResult:
    scenario: str
    target_pipes: int
    witness: list[int] | None
    max_ticks: int


def oracle_mode(
    feature_file: str | Path,
    scenario: str,
    *,
    max_ticks: int | None = None,
    config_path: str | Path | None = None,
) -> list[OracleResult]:
    """Exhaustive feasibility check of the selected scenarios (Flappy Bird only)."""
    from . import flappy

    config = RunConfig.load(resolve_config_path(config_path))
    ast = load_feature(feature_file)
    out = []
    for sc in select_scenarios(ast, scenario):
        plan = bind(ast, sc, config, feature_key(feature_file))
        if plan.env_id != "flappy":
            raise BdgError(f"the feasibility oracle supports the flappy environment only, not {plan.env_id!r}")
        env_config = scenario_env_config(plan, config)
        target = flappy.oracle_target(plan.assertions)
        if target is None:
            raise BdgError(f"scenario {sc.name!r} asserts no pipe count for the oracle to search for")
        cfg = flappy.FlappyConfig.from_env_config(env_config)
        ticks = max_ticks if max_ticks is not None else cfg.default_cap()
        out.append(OracleResult(sc.name, target, flappy.solve_feasible(cfg, ticks, target), ticks))
    return out


def iter_diagnostics(paths: Iterable[str | Path]) -> Iterable[tuple[Path, FeatureAst | None, list[Diagnostic]]]:
    for path in paths:
        path = Path(path)
        try:
            ast = parse_file(path)
        except GherkinSyntaxError as exc:
            yield path, None, exc.diagnostics
            continue
        yield path, ast, lint(ast)


def summarize_ast(ast: FeatureAst) -> Mapping[str, Any]:
    return {
        "feature": ast.name,
        "tags": list(ast.tags),
        "scenarios": [
            {"name": s.name, "tags": list(s.tags), "steps": [f"{st.keyword.value} {st.text}" for st in s.steps]}
            for s in ast.scenarios
        ],
    }
