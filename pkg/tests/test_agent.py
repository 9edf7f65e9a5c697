"""Tests for the imagination-trained actor-critic."""

import numpy as np
import pytest

from munlab.agent import (
    ExplorerPolicy,
    GoalCritic,
    GoalPolicy,
    _critic_regression,
    _imagination_pass,
    act,
    explorer_act,
    explorer_values,
    goal_value,
    intrinsic_reward,
    lambda_returns,
    make_explorer,
    make_goal_critic,
    make_goal_policy,
    sample_goal_mix,
    train_explorer_step,
    train_goal_agent_step,
)
from munlab.distance import make_distance_net
from munlab.dynamics import make_ensemble
from munlab.errors import ConfigurationError, DimensionError
from munlab.numerics import adam_init, finite_diff_check, init_mlp, mlp_forward_batch
from munlab.replay import Episode, ReplayBuffer


def lambda_returns_explicit(rewards, values, gamma, lam):
    """Weighted-sum definition of TD(lambda) returns (test oracle).

    R_t = (1 - lam) * sum_{n=1..H-t-1} lam^(n-1) G_t^(n) + lam^(H-t-1) G_t^(H-t)
    with n-step returns G_t^(n) = sum_{i<n} gamma^i r_{t+i} + gamma^n V_{t+n}.
    """
    h, b = rewards.shape
    out = np.zeros((h, b))
    for t in range(h):
        total = np.zeros(b)
        for n in range(1, h - t + 1):
            g_n = np.zeros(b)
            for i in range(n):
                g_n += gamma**i * rewards[t + i]
            g_n += gamma**n * values[t + n]
            weight = lam ** (n - 1) * (1 - lam) if n < h - t else lam ** (n - 1)
            total += weight * g_n
        out[t] = total
    return out


def _bounds():
    return np.array([-0.7, -2.0]), np.array([0.4, 1.0])


class TestActing:
    def test_zero_weight_policy_acts_at_midrange(self):
        rng = np.random.default_rng(0)
        low, high = _bounds()
        policy = make_goal_policy(3, low, high, rng)
        for w in policy.net.weights:
            w[:] = 0.0
        a = act(policy, np.ones(3), np.zeros(3))
        assert np.allclose(a, (low + high) / 2.0)

    def test_deterministic_act_is_pure(self):
        rng = np.random.default_rng(1)
        low, high = _bounds()
        policy = make_goal_policy(2, low, high, rng)
        s, g = rng.normal(size=2), rng.normal(size=2)
        a1 = act(policy, s, g)
        a2 = act(policy, s, g)
        assert np.array_equal(a1, a2)

    def test_stochastic_act_respects_bounds(self):
        rng = np.random.default_rng(2)
        low, high = _bounds()
        # Huge pre-squash noise saturates tanh, probing the bound edges.
        policy = make_goal_policy(2, low, high, rng, action_noise_std=5.0)
        s, g = rng.normal(size=2), rng.normal(size=2)
        draws = np.stack(
            [act(policy, s, g, mode="stochastic", rng=rng) for _ in range(3000)]
        )
        assert (draws >= low - 1e-12).all() and (draws <= high + 1e-12).all()
        # Saturation should push samples close to both edges of each dim.
        assert (draws.min(axis=0) < low + 0.05 * (high - low)).all()
        assert (draws.max(axis=0) > high - 0.05 * (high - low)).all()

    def test_stochastic_act_without_rng_raises(self):
        rng = np.random.default_rng(3)
        low, high = _bounds()
        policy = make_goal_policy(2, low, high, rng)
        with pytest.raises(ConfigurationError):
            act(policy, np.zeros(2), np.zeros(2), mode="stochastic")

    def test_unknown_mode_raises(self):
        rng = np.random.default_rng(4)
        low, high = _bounds()
        policy = make_goal_policy(2, low, high, rng)
        with pytest.raises(ConfigurationError):
            act(policy, np.zeros(2), np.zeros(2), mode="greedy")

    def test_explorer_act_bounds_and_value_shape(self):
        rng = np.random.default_rng(5)
        low, high = _bounds()
        explorer = make_explorer(3, low, high, rng, action_noise_std=5.0)
        draws = np.stack(
            [explorer_act(explorer, rng.normal(size=3), rng=rng) for _ in range(500)]
        )
        assert (draws >= low - 1e-12).all() and (draws <= high + 1e-12).all()
        vals = explorer_values(explorer, rng.normal(size=(7, 3)))
        assert vals.shape == (7,)

    def test_goal_value_scalar(self):
        rng = np.random.default_rng(6)
        critic = make_goal_critic(2, rng)
        v = goal_value(critic, np.zeros(2), np.ones(2))
        assert isinstance(v, float) and np.isfinite(v)


class TestLambdaReturns:
    def test_matches_explicit_weighted_sum(self):
        rng = np.random.default_rng(10)
        rewards = rng.normal(size=(8, 5))
        values = rng.normal(size=(9, 5))
        fast = lambda_returns(rewards, values, gamma=0.97, lam=0.9)
        slow = lambda_returns_explicit(rewards, values, gamma=0.97, lam=0.9)
        assert np.max(np.abs(fast - slow)) < 1e-10

    def test_gamma_zero_returns_rewards(self):
        rng = np.random.default_rng(11)
        rewards = rng.normal(size=(6, 4))
        values = rng.normal(size=(7, 4))
        out = lambda_returns(rewards, values, gamma=0.0, lam=0.95)
        assert np.allclose(out, rewards)

    def test_lambda_one_is_discounted_sum_to_terminal_value(self):
        rng = np.random.default_rng(12)
        h, b, gamma = 6, 3, 0.9
        rewards = rng.normal(size=(h, b))
        values = rng.normal(size=(h + 1, b))
        out = lambda_returns(rewards, values, gamma=gamma, lam=1.0)
        for t in range(h):
            expected = sum(gamma**i * rewards[t + i] for i in range(h - t))
            expected = expected + gamma ** (h - t) * values[h]
            assert np.allclose(out[t], expected)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            lambda_returns(np.zeros((4, 2)), np.zeros((4, 2)), 0.9, 0.9)


def _tiny_setup(seed, with_goal=True):
    """Small ensemble/distance/critic/policy stack for gradient checks."""
    rng = np.random.default_rng(seed)
    state_dim, action_dim, b, h = 2, 1, 3, 2
    low, high = np.array([-0.7]), np.array([0.4])
    model = make_ensemble(state_dim, action_dim, rng, n_members=3, hidden=(8,))
    model.in_norm.update(1.3 * rng.normal(size=(50, state_dim + action_dim)))
    model.delta_norm.update(0.2 * rng.normal(size=(50, state_dim)))
    in_dim = 2 * state_dim if with_goal else state_dim
    policy_net = init_mlp([in_dim, 8, action_dim], rng, activation="tanh")
    critic_net = init_mlp([in_dim, 8, 1], rng, activation="tanh")
    dnet = make_distance_net(state_dim, rng, hidden=(8,), horizon_ref=7) if with_goal else None
    goals = rng.normal(size=(b, state_dim)) if with_goal else None
    start = rng.normal(size=(b, state_dim))
    eps = rng.standard_normal((h, b, action_dim))
    return model, policy_net, critic_net, dnet, goals, start, eps, low, high, h


class TestPathwiseGradients:
    def test_goal_actor_gradient_matches_finite_differences(self):
        model, policy_net, critic_net, dnet, goals, start, eps, low, high, h = _tiny_setup(20)

        def run(p):
            return _imagination_pass(
                p, critic_net, model, start, goals, dnet, eps,
                h, 0.9, 0.8, 0.3, low, high,
            )

        report = finite_diff_check(
            policy_net,
            loss_fn=lambda p: -run(p).objective,
            grad_fn=lambda p: run(p).policy_grads,
        )
        assert report.passed, f"max rel err {report.max_rel_error:.3e}"

    def test_explorer_actor_gradient_matches_finite_differences(self):
        model, policy_net, critic_net, _, _, start, eps, low, high, h = _tiny_setup(
            21, with_goal=False
        )

        def run(p):
            return _imagination_pass(
                p, critic_net, model, start, None, None, eps,
                h, 0.9, 0.8, 0.3, low, high,
            )

        report = finite_diff_check(
            policy_net,
            loss_fn=lambda p: -run(p).objective,
            grad_fn=lambda p: run(p).policy_grads,
        )
        assert report.passed, f"max rel err {report.max_rel_error:.3e}"

    def test_objective_is_mean_lambda_return(self):
        model, policy_net, critic_net, dnet, goals, start, eps, low, high, h = _tiny_setup(22)
        up = _imagination_pass(
            policy_net, critic_net, model, start, goals, dnet, eps,
            h, 0.9, 0.8, 0.3, low, high,
        )
        assert up.mask.all()
        assert up.objective == pytest.approx(float(up.returns.mean()), abs=1e-12)
        ref = lambda_returns_explicit(up.rewards, up.values, 0.9, 0.8)
        assert np.max(np.abs(up.returns - ref)) < 1e-10


class TestIntrinsicReward:
    def test_nonnegative_and_zero_for_identical_members(self):
        rng = np.random.default_rng(30)
        model = make_ensemble(2, 1, rng, n_members=3, hidden=(8,))
        r = intrinsic_reward(model, np.zeros(2), np.zeros(1))
        assert r >= 0.0
        for m in model.members[1:]:
            for i, w in enumerate(model.members[0].weights):
                m.weights[i][:] = w
            for i, bias in enumerate(model.members[0].biases):
                m.biases[i][:] = bias
        assert intrinsic_reward(model, np.ones(2), np.zeros(1)) == pytest.approx(0.0)

    def test_single_member_raises(self):
        rng = np.random.default_rng(31)
        model = make_ensemble(2, 1, rng, n_members=1)
        with pytest.raises(ConfigurationError):
            intrinsic_reward(model, np.zeros(2), np.zeros(1))

    def test_explorer_training_rejects_single_member(self):
        rng = np.random.default_rng(32)
        model = make_ensemble(2, 1, rng, n_members=1)
        low, high = np.array([-1.0]), np.array([1.0])
        explorer = make_explorer(2, low, high, rng)
        buffer = _small_buffer(rng, state_dim=2, action_dim=1)
        with pytest.raises(ConfigurationError):
            train_explorer_step(
                explorer, model, buffer, adam_init(explorer.net), adam_init(explorer.critic_net),
                rng, batch_size=4, horizon=3,
            )


def _small_buffer(rng, state_dim=2, action_dim=1, episodes=4, length=10):
    buffer = ReplayBuffer(capacity=16)
    for _ in range(episodes):
        states = rng.normal(size=(length + 1, state_dim))
        goal = rng.normal(size=state_dim)
        buffer.append(
            Episode(
                states=states,
                actions=rng.uniform(-1, 1, size=(length, action_dim)),
                goals=np.tile(goal, (length, 1)),
                rewards=np.zeros(length),
                dones=np.zeros(length, dtype=bool),
                provenance="env_goal",
            )
        )
    return buffer


class TestGoalMix:
    def test_half_subgoals_half_env_goals(self):
        rng = np.random.default_rng(40)
        subgoals = np.array([[9.0, 9.0], [8.0, 8.0]])
        env_goal = np.array([1.5, -2.5])
        goals = sample_goal_mix(rng, 10, subgoals, lambda r: env_goal.copy())
        from_sub = sum(any(np.array_equal(g, s) for s in subgoals) for g in goals)
        from_env = sum(np.array_equal(g, env_goal) for g in goals)
        assert from_sub == 5 and from_env == 5

    def test_no_subgoals_all_env(self):
        rng = np.random.default_rng(41)
        env_goal = np.array([1.0, 1.0])
        goals = sample_goal_mix(rng, 6, None, lambda r: env_goal.copy())
        assert goals.shape == (6, 2)
        assert all(np.array_equal(g, env_goal) for g in goals)


class TestTrainSteps:
    def test_goal_agent_step_shapes_and_isolation(self):
        rng = np.random.default_rng(50)
        state_dim, action_dim = 2, 1
        low, high = np.array([-1.0]), np.array([1.0])
        model = make_ensemble(state_dim, action_dim, rng, n_members=2, hidden=(16,))
        dnet = make_distance_net(state_dim, rng, hidden=(16,))
        policy = make_goal_policy(state_dim, low, high, rng, hidden=(16,))
        critic = make_goal_critic(state_dim, rng, hidden=(16,))
        buffer = _small_buffer(rng)
        model_bytes = [w.tobytes() for m in model.members for w in m.weights]
        dnet_bytes = [w.tobytes() for w in dnet.net.weights]
        diag, rollouts = train_goal_agent_step(
            policy, critic, model, dnet, buffer,
            adam_init(policy.net), adam_init(critic.net), rng,
            env_goal_sampler=lambda r: r.normal(size=state_dim),
            batch_size=8, horizon=4,
        )
        assert set(diag) == {
            "actor_objective", "critic_loss", "mean_return", "mean_reward", "dropped_rows",
        }
        assert diag["dropped_rows"] == 0
        assert len(rollouts) == 8
        assert rollouts[0].states.shape == (5, state_dim)
        assert rollouts[0].actions.shape == (4, action_dim)
        # The agent update must not touch the model or the distance net.
        assert [w.tobytes() for m in model.members for w in m.weights] == model_bytes
        assert [w.tobytes() for w in dnet.net.weights] == dnet_bytes

    def test_goal_agent_step_updates_policy_and_critic(self):
        rng = np.random.default_rng(51)
        low, high = np.array([-1.0]), np.array([1.0])
        model = make_ensemble(2, 1, rng, n_members=2, hidden=(16,))
        dnet = make_distance_net(2, rng, hidden=(16,))
        policy = make_goal_policy(2, low, high, rng, hidden=(16,))
        critic = make_goal_critic(2, rng, hidden=(16,))
        buffer = _small_buffer(rng)
        before_p = [w.copy() for w in policy.net.weights]
        before_c = [w.copy() for w in critic.net.weights]
        train_goal_agent_step(
            policy, critic, model, dnet, buffer,
            adam_init(policy.net), adam_init(critic.net), rng,
            env_goal_sampler=lambda r: r.normal(size=2), batch_size=8, horizon=4,
        )
        assert any(not np.array_equal(a, b) for a, b in zip(before_p, policy.net.weights))
        assert any(not np.array_equal(a, b) for a, b in zip(before_c, critic.net.weights))

    def test_explorer_critic_learns_constant_reward_value(self):
        rng = np.random.default_rng(52)
        state_dim, action_dim, gamma = 2, 1, 0.5
        low, high = np.array([-1.0]), np.array([1.0])
        model = make_ensemble(state_dim, action_dim, rng, n_members=4, hidden=(8,))
        # Zero weights + distinct zero-mean output biases: every member
        # predicts its own constant delta, so the disagreement reward is the
        # same constant c everywhere and imagined states never move.  The
        # explorer critic must then converge to c / (1 - gamma) everywhere;
        # an off-by-one reward-indexing bug would give gamma * c / (1 - gamma),
        # a factor of two away at this gamma.
        for i, m in enumerate(model.members):
            for w in m.weights:
                w[:] = 0.0
            m.biases[-1][:] = 0.5 * (i - 1.5)
        deltas = np.stack([np.full(state_dim, 0.5 * (i - 1.5)) for i in range(4)])
        c = float(deltas.var(axis=0).mean())
        target = c / (1.0 - gamma)
        explorer = make_explorer(state_dim, low, high, rng, hidden=(16,))
        buffer = _small_buffer(rng)
        a_opt, c_opt = adam_init(explorer.net), adam_init(explorer.critic_net)
        for lr, steps in [(3e-3, 500), (5e-4, 300), (1e-4, 200)]:
            a_opt.learning_rate = c_opt.learning_rate = lr
            for _ in range(steps):
                diag = train_explorer_step(
                    explorer, model, buffer, a_opt, c_opt, rng,
                    batch_size=16, horizon=10, gamma=gamma, lam=0.9,
                )
                assert diag["mean_reward"] == pytest.approx(c, rel=1e-9)
        vals = explorer_values(explorer, buffer.sample_states(64, np.random.default_rng(99)))
        assert abs(vals.mean() - target) / target < 0.05
        assert np.max(np.abs(vals - target)) / target < 0.15

    def test_critic_regression_reduces_loss(self):
        rng = np.random.default_rng(53)
        low, high = np.array([-1.0]), np.array([1.0])
        model = make_ensemble(2, 1, rng, n_members=2, hidden=(8,))
        dnet = make_distance_net(2, rng, hidden=(8,))
        policy_net = init_mlp([4, 8, 1], rng, activation="tanh")
        critic_net = init_mlp([4, 8, 1], rng, activation="tanh")
        goals = rng.normal(size=(8, 2))
        start = rng.normal(size=(8, 2))
        opt = adam_init(critic_net)
        opt.learning_rate = 1e-2
        losses = []
        # Deterministic rollouts from fixed starts with a fixed policy give a
        # stable regression problem (targets move only through bootstraps).
        for _ in range(150):
            up = _imagination_pass(
                policy_net, critic_net, model, start, goals, dnet, None,
                4, 0.8, 0.9, 0.0, low, high,
            )
            losses.append(_critic_regression(critic_net, up, opt))
        assert np.mean(losses[-10:]) < 0.01 * losses[0]
