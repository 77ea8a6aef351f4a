import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdg.env import (
    ChainEnv,
    EnvConfig,
    FeatureSpec,
    RewardSpec,
    Transition,
    derive_seed,
    feature_extract,
    get_env,
    make_rng,
    reward_eval,
    run_episode,
    splitmix64,
)
from bdg.errors import ActionOutOfRange, EpisodeFinished, InvalidConfig, MissingChannel, UnknownEnvironment
from bdg.flappy import FlappyEnv

FLAPPY_REWARD = RewardSpec({"pipe_passed": 1.0, "collision": -1.0}, 0.01)


class TestSeeds:
    def test_splitmix_reference_values(self):
        # First outputs of the reference splitmix64 generator seeded with 0.
        assert splitmix64(0) == 0xE220A8397B1DCDAF
        assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4

    def test_streams_differ(self):
        assert derive_seed(7, 1) != derive_seed(7, 2)
        assert derive_seed(7, 1) != derive_seed(8, 1)

    def test_rng_reproducible(self):
        assert make_rng(3, 5).random() == make_rng(3, 5).random()


class TestEnvContract:
    def test_reset_deterministic(self):
        env = FlappyEnv()
        assert env.reset(EnvConfig("flappy"), 42) == env.reset(EnvConfig("flappy"), 42)

    def test_unknown_parameter(self):
        with pytest.raises(InvalidConfig) as info:
            FlappyEnv().reset(EnvConfig("flappy", {"gravity_mode": "moon"}), 0)
        assert info.value.parameter == "gravity_mode"

    def test_cap_zero(self):
        with pytest.raises(InvalidConfig):
            FlappyEnv().reset(EnvConfig("flappy", episode_cap=0), 0)

    def test_wrong_env_id(self):
        with pytest.raises(InvalidConfig):
            FlappyEnv().reset(EnvConfig("chain"), 0)

    def test_step_after_done(self):
        env = ChainEnv()
        env.reset(EnvConfig("chain", episode_cap=1), 0)
        assert env.step(0).done
        with pytest.raises(EpisodeFinished):
            env.step(0)

    def test_step_before_reset(self):
        with pytest.raises(EpisodeFinished):
            ChainEnv().step(0)

    def test_action_out_of_range(self):
        env = ChainEnv()
        env.reset(EnvConfig("chain"), 0)
        with pytest.raises(ActionOutOfRange):
            env.step(env.n_actions)
        with pytest.raises(ActionOutOfRange):
            env.step(-1)
        with pytest.raises(ActionOutOfRange):
            env.step(True)

    def test_ticks_increase(self):
        env = FlappyEnv()
        env.reset(EnvConfig("flappy"), 0)
        assert [env.step(1).tick for _ in range(3)] == [1, 2, 3]

    def test_numpy_action_accepted(self):
        env = ChainEnv()
        env.reset(EnvConfig("chain"), 0)
        assert env.step(np.int64(1)).obs == {"position": 1.0}

    @given(st.lists(st.integers(0, 1), max_size=80), st.integers(1, 30))
    @settings(max_examples=60, deadline=None)
    def test_episode_cap_bounds_transitions(self, actions, cap):
        env = FlappyEnv()
        env.reset(EnvConfig("flappy", episode_cap=cap), 0)
        n = 0
        for a in actions:
            if env.done:
                break
            tr = env.step(a)
            n += 1
        assert n <= cap
        if n == cap:
            assert env.done

    @given(st.lists(st.integers(0, 1), max_size=60))
    @settings(max_examples=40, deadline=None)
    def test_determinism(self, actions):
        def run():
            env = FlappyEnv()
            out = [env.reset(EnvConfig("flappy", {"pipe1": "lowest"}), 9)]
            for a in actions:
                if env.done:
                    break
                out.append(env.step(a))
            return out

        assert run() == run()

    def test_unknown_environment(self):
        with pytest.raises(UnknownEnvironment):
            get_env("pong")


class TestFeatures:
    def test_affine(self):
        spec = FeatureSpec.of(("bird_y", 1 / 512, 0.0))
        assert feature_extract({"bird_y": 200.0}, spec).tolist() == [0.390625]

    def test_empty(self):
        assert feature_extract({"bird_y": 1.0}, FeatureSpec(())).shape == (0,)

    def test_missing_channel(self):
        with pytest.raises(MissingChannel):
            feature_extract({}, FeatureSpec.of(("bird_y", 1.0, 0.0)))

    def test_round_trip_list(self):
        spec = FeatureSpec.of(("a", 2.0, 1.0), ("b", 0.5, -1.0))
        assert FeatureSpec.from_list(spec.to_list()) == spec
        assert spec.dim == 2

    @given(st.floats(-1e6, 1e6), st.floats(-10, 10), st.floats(-10, 10))
    def test_finite(self, x, a, b):
        out = feature_extract({"c": x}, FeatureSpec.of(("c", a, b)))
        assert np.isfinite(out).all()


class TestReward:
    def test_pass_with_bonus(self):
        tr = Transition({}, ("pipe_passed",), False, 1)
        assert reward_eval(tr, FLAPPY_REWARD) == pytest.approx(1.01)

    def test_collision_done(self):
        assert reward_eval(Transition({}, ("collision",), True, 5), FLAPPY_REWARD) == -1.0

    def test_bonus_only(self):
        assert reward_eval(Transition({}, (), False, 1), FLAPPY_REWARD) == 0.01

    def test_unknown_events_ignored(self):
        assert reward_eval(Transition({}, ("sparkle",), True, 1), FLAPPY_REWARD) == 0.0

    def test_non_finite_weight_rejected(self):
        with pytest.raises(ValueError):
            RewardSpec({"x": math.inf})

    def test_callable(self):
        assert FLAPPY_REWARD(Transition({}, ("pipe_passed", "pipe_passed"), False, 1)) == pytest.approx(2.01)

    @given(
        st.lists(st.sampled_from(["a", "b", "c"]), max_size=6),
        st.lists(st.sampled_from(["a", "b", "c"]), max_size=6),
        st.floats(-5, 5),
        st.floats(-5, 5),
    )
    def test_linear_in_counts(self, e1, e2, wa, wb):
        spec = RewardSpec({"a": wa, "b": wb}, 0.0)
        joint = reward_eval(Transition({"x": 1.0}, tuple(e1 + e2), True, 1), spec)
        split = reward_eval(Transition({"x": 9.0}, tuple(e1), True, 1), spec) + reward_eval(Transition({}, tuple(e2), True, 1), spec)
        assert joint == pytest.approx(split)

    def test_dict_round_trip(self):
        assert RewardSpec.from_dict(FLAPPY_REWARD.to_dict()) == FLAPPY_REWARD


class TestChain:
    def test_goal_in_four_steps(self):
        outcome = run_episode(ChainEnv(), EnvConfig("chain"), 0, lambda obs: 1, get_env("chain").reward)
        assert outcome.ticks == 4
        assert outcome.events == Counter({"goal": 1})
        assert outcome.episodic_return == 1.0

    def test_bump_until_cap(self):
        outcome = run_episode(ChainEnv(), EnvConfig("chain", episode_cap=7), 0, lambda obs: 0)
        assert outcome.count("bump") == 7 and outcome.ticks == 7

    def test_invalid_start(self):
        with pytest.raises(InvalidConfig):
            ChainEnv().reset(EnvConfig("chain", {"start": 4}), 0)

    def test_config_dict_round_trip(self):
        config = EnvConfig("chain", {"start": 2}, 9)
        assert EnvConfig.from_dict(config.to_dict()) == config
