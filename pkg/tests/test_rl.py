import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bdg.env import ChainEnv, EnvConfig, FeatureSpec, RewardSpec
from bdg.errors import DimensionMismatch, LengthMismatch, NonFiniteGradient, NonFiniteLoss
from bdg.rl import (
    Adam,
    DQNAgent,
    Mlp,
    PPOAgent,
    QLearningAgent,
    QTable,
    ReplayBuffer,
    TrainingTask,
    clipped_surrogate,
    dqn_train_step,
    epsilon,
    gae,
    log_softmax,
    policy_loss,
    qtable_update,
    softmax,
    sweep_q_learning,
)
from bdg.rl.ppo import normalize

CHAIN_GAMMA = 0.9
CHAIN_REWARD = RewardSpec({"goal": 1.0, "bump": -0.1}, 0.0)


def chain_task(**kw) -> TrainingTask:
    return TrainingTask(
        ChainEnv,
        EnvConfig("chain", episode_cap=20),
        FeatureSpec.of(("position", 1.0, 0.0)),
        CHAIN_REWARD,
        success=lambda o: o.count("goal") == 1 and o.ticks == 4,
        **kw,
    )


def chain_value_iteration(gamma: float, tol: float = 1e-14) -> np.ndarray:
    """Q* for the corridor, written out from its rules: right advances, cell 4 is the goal, left bumps at 0."""
    q = np.zeros((4, 2))
    while True:
        v = np.append(q.max(axis=1), 0.0)  # cell 4 is terminal
        new = np.empty_like(q)
        for s in range(4):
            new[s, 0] = (-0.1 + gamma * v[0]) if s == 0 else gamma * v[s - 1]
            new[s, 1] = 1.0 if s == 3 else gamma * v[s + 1]
        if np.abs(new - q).max() < tol:
            return new
        q = new


def finite_difference(net: Mlp, x: np.ndarray, c: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(net.flat)
    for i in range(len(net.flat)):
        orig = net.flat[i]
        net.flat[i] = orig + h
        up = float((net(x) * c).sum())
        net.flat[i] = orig - h
        down = float((net(x) * c).sum())
        net.flat[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


class TestMlp:
    def test_zero_net(self):
        net = Mlp([3, 4, 2])
        assert np.all(net(np.ones(3)) == 0)

    def test_affine(self):
        net = Mlp([1, 1], np.array([2.0, 1.0]))
        assert net.forward(np.array([3.0]))[0].tolist() == [7.0]

    def test_relu(self):
        net = Mlp([1, 1, 1], np.array([-1.0, 0.0, 1.0, 0.0]))
        out, cache = net.forward(np.array([2.0]))
        assert cache[1].tolist() == [0.0] and out.tolist() == [0.0]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Mlp([3, 2]).forward(np.ones(4))
        with pytest.raises(DimensionMismatch):
            Mlp([3, 2], np.zeros(5))

    def test_zero_upstream_gradient(self):
        net = Mlp.glorot([3, 5, 2], np.random.default_rng(0))
        _, cache = net.forward(np.ones(3))
        assert np.all(net.backward(cache, np.zeros(2)) == 0)

    def test_linear_gradient(self):
        net = Mlp([1, 1], np.array([2.0, 1.0]))
        _, cache = net.forward(np.array([3.0]))
        assert net.backward(cache, np.array([1.0])).tolist() == [3.0, 1.0]

    def test_views_share_storage(self):
        net = Mlp([2, 3, 1])
        net.weights[0][0, 0] = 5.0
        assert net.flat[0] == 5.0
        assert Mlp.n_params([2, 3, 1]) == 2 * 3 + 3 + 3 + 1

    def test_glorot_bounds_and_determinism(self):
        a = Mlp.glorot([8, 16, 4], np.random.default_rng(1))
        b = Mlp.glorot([8, 16, 4], np.random.default_rng(1))
        assert np.array_equal(a.flat, b.flat)
        assert np.abs(a.weights[0]).max() <= math.sqrt(6 / 24)
        assert np.all(a.biases[0] == 0)

    def test_batch_equals_sum_of_singles(self):
        rng = np.random.default_rng(2)
        net = Mlp.glorot([4, 6, 3], rng)
        X, D = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
        out, cache = net.forward(X)
        batched = net.backward(cache, D)
        singles = sum(net.backward(net.forward(X[i])[1], D[i]) for i in range(5))
        np.testing.assert_allclose(batched, singles, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(out, net(X), rtol=0, atol=0)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences_5_8_2(self, seed):
        rng = np.random.default_rng(seed)
        net = Mlp.glorot([5, 8, 2], rng)
        net.flat += rng.normal(scale=0.1, size=net.flat.shape)
        x, c = rng.normal(size=5), rng.normal(size=2)
        _, cache = net.forward(x)
        analytic = net.backward(cache, c)
        numeric = finite_difference(net, x, c)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        assert rel <= 1e-6


class TestSoftmax:
    @given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-50, 50)))
    def test_sums_to_one_and_matches_log(self, logits):
        p = softmax(logits)
        assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)
        assert np.all(np.abs(np.exp(log_softmax(logits)) - p) <= 1e-12)

    def test_extreme_logits_finite(self):
        assert np.isfinite(log_softmax(np.array([[1e300, -1e300]]))).all()


class TestAdam:
    def test_first_step(self):
        opt = Adam(1, lr=0.001)
        theta = np.zeros(1)
        opt.step(theta, np.ones(1))
        assert theta[0] == pytest.approx(-0.001, rel=1e-6)

    def test_zero_gradient(self):
        opt = Adam(3)
        theta = np.arange(3.0)
        opt.step(theta, np.zeros(3))
        assert theta.tolist() == [0.0, 1.0, 2.0]

    def test_nan_rejected(self):
        with pytest.raises(NonFiniteGradient):
            Adam(1).step(np.zeros(1), np.array([np.nan]))

    def test_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            Adam(2).step(np.zeros(3), np.zeros(3))

    def test_matches_reference_formulas(self):
        rng = np.random.default_rng(4)
        opt = Adam(5, lr=0.01)
        theta = rng.normal(size=5)
        ref = theta.copy()
        m = v = np.zeros(5)
        for t in range(1, 20):
            g = rng.normal(size=5)
            opt.step(theta, g)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(theta, ref, rtol=1e-12, atol=1e-14)


class TestReplay:
    @given(st.integers(1, 10), st.integers(0, 40))
    def test_holds_last_c(self, capacity, n):
        buf = ReplayBuffer(capacity, 1)
        for i in range(n):
            buf.push(np.array([i]), i % 2, float(i), np.array([i + 1]), False)
        assert len(buf) == min(n, capacity)
        assert [r for _, _, r, _, _ in buf.items()] == [float(i) for i in range(max(0, n - capacity), n)]

    def test_sample_shapes(self):
        buf = ReplayBuffer(4, 2)
        buf.push(np.ones(2), 1, 0.5, np.zeros(2), True)
        x, a, r, x2, d = buf.sample(np.random.default_rng(0), 3)
        assert x.shape == (3, 2) and a.tolist() == [1, 1, 1] and d.tolist() == [1.0, 1.0, 1.0]


class TestQLearning:
    def test_bellman_arithmetic(self):
        q = QTable(2)
        qtable_update(q, "s", 0, 1.0, "t", False, 0.1, 0.99)
        assert q.get("s")[0] == pytest.approx(0.1)

    def test_bootstrapped(self):
        q = QTable(2)
        q.row("s")[0] = 0.5
        q.row("t")[1] = 1.0
        qtable_update(q, "s", 0, 0.0, "t", False, 0.5, 0.9)
        assert q.get("s")[0] == pytest.approx(0.7)

    def test_terminal(self):
        q = QTable(2)
        q.row("t")[0] = 100.0
        qtable_update(q, "s", 1, 1.0, "t", True, 1.0, 0.9)
        assert q.get("s")[1] == 1.0

    def test_sweeps_match_value_iteration(self):
        def transition(s, a):
            s2, events, done = ChainEnv.transition(s, a)
            return s2, CHAIN_REWARD.weights.get(events[0], 0.0) if events else 0.0, done

        q = sweep_q_learning(transition, 5, 2, CHAIN_GAMMA, terminal=frozenset({4}))
        q_star = chain_value_iteration(CHAIN_GAMMA)
        learned = np.array([q.get(s) for s in range(4)])
        assert np.abs(learned - q_star).max() <= 1e-3
        assert learned.argmax(axis=1).tolist() == q_star.argmax(axis=1).tolist()

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 1), st.floats(-1, 1.01), st.integers(0, 3), st.booleans()), max_size=200),
           st.floats(0.01, 1.0), st.floats(0.0, 0.99))
    @settings(max_examples=60)
    def test_q_bound(self, updates, alpha, gamma):
        q = QTable(2)
        bound = 1.01 / (1 - gamma)
        for s, a, r, s2, done in updates:
            qtable_update(q, s, a, r, s2, done, alpha, gamma)
            assert q.max_abs() <= bound + 1e-9


class TestDqn:
    def test_epsilon_schedule(self):
        assert epsilon(0) == 1.0
        assert epsilon(50_000) == 0.05
        assert epsilon(25_000) == pytest.approx(0.525)
        assert epsilon(10**7) == 0.05

    def test_terminal_loss(self):
        net = Mlp([2, 2])
        batch = (np.zeros((1, 2)), np.array([0]), np.array([1.0]), np.zeros((1, 2)), np.array([1.0]))
        assert dqn_train_step(net, net.copy(), batch, 0.99, Adam(net.flat.size)) == 1.0

    def test_fixed_point(self):
        # Output is constant 1 for action 0; Bellman target with r=0.5, gamma=0.5 is 0.5 + 0.5*1 = 1.
        net = Mlp([1, 2], np.array([0.0, 0.0, 1.0, 1.0]))
        before = net.flat.copy()
        batch = (np.ones((3, 1)), np.zeros(3, dtype=int), np.full(3, 0.5), np.ones((3, 1)), np.zeros(3))
        loss = dqn_train_step(net, net.copy(), batch, 0.5, Adam(net.flat.size))
        assert loss == 0.0
        assert np.array_equal(net.flat, before)

    def test_loss_decreases_on_frozen_batch(self):
        rng = np.random.default_rng(0)
        net = Mlp.glorot([3, 16, 2], rng)
        target = net.copy()
        batch = (rng.normal(size=(32, 3)), rng.integers(0, 2, 32), rng.normal(size=32), rng.normal(size=(32, 3)), (rng.random(32) < 0.3).astype(float))
        opt = Adam(net.flat.size, lr=1e-2)
        losses = [dqn_train_step(net, target, batch, 0.9, opt) for _ in range(100)]
        assert losses[-1] < 0.5 * losses[0]

    def test_gradient_clipping(self):
        net = Mlp([1, 1])
        opt = Adam(2, lr=1.0)
        batch = (np.full((1, 1), 1e6), np.array([0]), np.array([1e6]), np.zeros((1, 1)), np.array([1.0]))
        dqn_train_step(net, net.copy(), batch, 0.9, opt)
        assert np.all(np.abs(opt.m) <= 0.1 * 10 + 1e-12)

    def test_non_finite_loss(self):
        net = Mlp([1, 1])
        batch = (np.ones((1, 1)), np.array([0]), np.array([np.inf]), np.ones((1, 1)), np.array([1.0]))
        with pytest.raises(NonFiniteLoss):
            dqn_train_step(net, net.copy(), batch, 0.9, Adam(2))


class TestPpo:
    def test_gae_single_step(self):
        adv, ret = gae([1.0], [0.5, 1.0], [0.0], 0.99, 0.95)
        assert adv[0] == pytest.approx(1.49)
        assert ret[0] == pytest.approx(1.99)

    def test_gae_done(self):
        adv, _ = gae([1.0], [0.5, 1.0], [1.0], 0.99, 0.95)
        assert adv[0] == pytest.approx(0.5)

    def test_gae_lambda_zero(self):
        r, v, d = np.array([1.0, 2.0]), np.array([0.3, 0.4, 0.5]), np.zeros(2)
        adv, _ = gae(r, v, d, 0.9, 0.0)
        np.testing.assert_allclose(adv, r + 0.9 * v[1:] - v[:2])

    def test_gae_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            gae([1.0, 2.0], [0.0, 0.0], [0.0, 0.0], 0.9, 0.9)

    @given(st.integers(1, 30), st.integers(0, 10_000))
    @settings(max_examples=50)
    def test_gae_lambda_one_is_discounted_return_minus_value(self, T, seed):
        rng = np.random.default_rng(seed)
        r, v = rng.normal(size=T), rng.normal(size=T + 1)
        d = (rng.random(T) < 0.2).astype(float)
        gamma = 0.97
        adv, _ = gae(r, v, d, gamma, 1.0)
        for t in range(T):
            g, disc = 0.0, 1.0
            for k in range(t, T):
                g += disc * r[k]
                if d[k]:
                    break
                disc *= gamma
            else:
                g += disc * v[T]
            assert abs(adv[t] - (g - v[t])) <= 1e-10

    def test_clip_arithmetic(self):
        assert clipped_surrogate(np.array([1.5]), np.array([1.0]), 0.2)[0] == pytest.approx(1.2)
        assert clipped_surrogate(np.array([0.5]), np.array([-1.0]), 0.2)[0] == pytest.approx(-0.8)

    @given(hnp.arrays(np.float64, 8, elements=st.floats(0.01, 5)), hnp.arrays(np.float64, 8, elements=st.floats(-5, 5)))
    def test_clip_never_exceeds_unclipped(self, ratio, adv):
        assert np.all(clipped_surrogate(ratio, adv, 0.2) <= ratio * adv + 1e-12)

    def test_identity_policy_surrogate_is_mean_advantage(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(16, 2))
        actions = rng.integers(0, 2, 16)
        logp_old = log_softmax(logits)[np.arange(16), actions]
        adv = normalize(rng.normal(size=16))
        loss, _, _ = policy_loss(logits, actions, logp_old, adv, 0.2, 0.0)
        assert abs(loss) < 1e-12

    def test_normalize_guard(self):
        assert np.all(normalize(np.ones(4)) == 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_policy_loss_gradient(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(6, 3))
        actions = rng.integers(0, 3, 6)
        logp_old = log_softmax(logits + rng.normal(scale=0.1, size=(6, 3)))[np.arange(6), actions]
        adv = rng.normal(size=6)
        _, grad, _ = policy_loss(logits, actions, logp_old, adv, 0.2, 0.05)
        h = 1e-6
        numeric = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            up, down = logits.copy(), logits.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (policy_loss(up, actions, logp_old, adv, 0.2, 0.05)[0] - policy_loss(down, actions, logp_old, adv, 0.2, 0.05)[0]) / (2 * h)
        np.testing.assert_allclose(grad, numeric, atol=1e-7)


class TestAgents:
    def test_get_params_and_clone(self):
        agent = DQNAgent(hidden=(8,), lr=1e-2)
        params = agent.get_params()
        assert params["hidden"] == (8,) and params["lr"] == 1e-2
        copy = clone(agent)
        assert copy.get_params() == params and copy is not agent

    def test_predict_requires_fit(self):
        with pytest.raises(NotFittedError):
            PPOAgent().predict(np.zeros((1, 5)))

    def test_budget_validated(self):
        with pytest.raises(ValueError):
            QLearningAgent(budget=0).fit(chain_task())

    def test_budget_one(self):
        agent = QLearningAgent(budget=1, probe_interval=1).fit(chain_task())
        assert agent.training_stats_.env_steps == 1
        assert len(agent.q_table_) <= 1

    def test_qlearning_agent_learns_chain_policy(self):
        agent = QLearningAgent(alpha=0.5, gamma=CHAIN_GAMMA, budget=3000, probe_interval=500, epsilon_decay_steps=2000).fit(chain_task(threshold=1.01))
        q_star = chain_value_iteration(CHAIN_GAMMA)
        greedy = agent.predict(np.arange(4.0)[:, None])
        assert greedy.tolist() == q_star.argmax(axis=1).tolist()

    def test_predict_validates_width(self):
        agent = QLearningAgent(budget=50, probe_interval=50).fit(chain_task())
        with pytest.raises(ValueError):
            agent.predict(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            agent.predict(np.array([[np.nan]]))

    @pytest.mark.parametrize("make", [
        lambda: DQNAgent(hidden=(8,), budget=600, learning_starts=50, probe_interval=300, random_state=3),
        lambda: PPOAgent(hidden=(8,), n_steps=128, budget=600, probe_interval=300, random_state=3),
        lambda: QLearningAgent(budget=600, probe_interval=300, random_state=3),
    ])
    def test_deterministic_per_seed(self, make):
        a, b = make().fit(chain_task()), make().fit(chain_task())
        assert a.training_stats_.env_steps == b.training_stats_.env_steps
        assert a.training_stats_.epochs == b.training_stats_.epochs
        X = np.arange(4.0)[:, None]
        assert np.array_equal(a._scores(X), b._scores(X))

    def test_ppo_predict_proba(self):
        agent = PPOAgent(hidden=(8,), n_steps=64, budget=64, probe_interval=64).fit(chain_task())
        p = agent.predict_proba(np.arange(4.0)[:, None])
        assert p.shape == (4, 2)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert agent.predict(np.arange(4.0)[:, None]).tolist() == p.argmax(axis=1).tolist()

    def test_dqn_learns_chain(self):
        agent = DQNAgent(hidden=(16,), budget=4000, learning_starts=100, epsilon_decay_steps=2000, target_sync=100, probe_interval=500, gamma=CHAIN_GAMMA).fit(chain_task())
        assert agent.score(chain_task()) == 1.0
        assert agent.training_stats_.stopped_early

    def test_ppo_learns_chain(self):
        agent = PPOAgent(hidden=(16,), n_steps=256, budget=20_000, probe_interval=1024, lr=3e-3).fit(chain_task())
        assert agent.score(chain_task()) == 1.0
