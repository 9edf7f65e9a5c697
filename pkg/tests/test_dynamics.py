"""Tests for the dynamics ensemble, imagination, and model-error probes."""

import numpy as np
import pytest

from munlab.dynamics import (
    DynamicsEnsemble,
    compound_error,
    disagreement_backward,
    imagine,
    make_ensemble,
    one_step_error,
    predict,
    predict_batch,
    rollout_trace,
    step_backward,
    train_model_step,
)
from munlab.errors import ConfigurationError, ModelDivergenceError
from munlab.numerics import adam_init, finite_diff_check, mlp_backward_batch, mlp_forward_batch
from munlab.replay import Episode, ReplayBuffer


def _buffer_from_arrays(states_list):
    buf = ReplayBuffer()
    for states, actions in states_list:
        t = actions.shape[0]
        buf.append(
            Episode(
                states=states,
                actions=actions,
                goals=np.zeros((t, states.shape[1])),
                rewards=np.zeros(t),
                dones=np.zeros(t, dtype=bool),
                provenance="env_goal",
            )
        )
    return buf


def _linear_system_buffer(rng, n_episodes=40, t=50, noise=0.01):
    # s' = A s + B a + uniform(-noise, noise)
    a_mat = np.array([[0.9, 0.1], [0.0, 0.95]])
    b_mat = np.array([[0.2], [0.1]])
    eps = []
    for _ in range(n_episodes):
        s = rng.normal(size=2)
        states = [s]
        actions = rng.uniform(-1, 1, size=(t, 1))
        for i in range(t):
            s = a_mat @ s + b_mat @ actions[i] + rng.uniform(-noise, noise, size=2)
            states.append(s)
        eps.append((np.stack(states), actions))
    return _buffer_from_arrays(eps), noise


def test_single_member_disagreement_is_zero():
    model = make_ensemble(3, 2, np.random.default_rng(0), n_members=1, hidden=(16,))
    _, dis = predict(model, np.ones(3), np.zeros(2))
    assert dis == 0.0


def test_identical_members_have_zero_disagreement():
    rng = np.random.default_rng(1)
    model = make_ensemble(2, 1, rng, n_members=4, hidden=(8,))
    for m in model.members[1:]:
        for i in range(len(m.weights)):
            m.weights[i][:] = model.members[0].weights[i]
            m.biases[i][:] = model.members[0].biases[i]
    _, dis = predict_batch(model, rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))
    assert np.allclose(dis, 0.0, atol=1e-28)


def test_make_ensemble_rejects_zero_members():
    with pytest.raises(ConfigurationError):
        make_ensemble(2, 1, np.random.default_rng(0), n_members=0)


def test_training_reaches_noise_floor_on_linear_system():
    rng = np.random.default_rng(2)
    buf, noise = _linear_system_buffer(rng)
    model = make_ensemble(2, 1, rng, n_members=4, hidden=(64, 64))
    opts = [adam_init(m, 1e-3) for m in model.members]
    for _ in range(400):
        train_model_step(model, opts, buf, 64, rng)
    probe = buf.sample_transition_arrays(500, rng)
    err = one_step_error(model, probe)
    floor = 2 * noise**2 / 3  # E||uniform noise||^2 over 2 dims
    assert err < 10 * floor, f"one-step error {err} vs floor {floor}"


def test_overfit_identical_transitions_loss_decreases():
    rng = np.random.default_rng(3)
    s0 = np.array([[0.3, -0.2]])
    a0 = np.array([[0.5]])
    s1 = np.array([[0.4, 0.1]])
    states = np.concatenate([s0, s1])
    buf = _buffer_from_arrays([(states, a0)] * 4)
    model = make_ensemble(2, 1, rng, n_members=2, hidden=(16,))
    # Seed the normalizers with spread data so a batch of identical rows
    # does not collapse the stds to their floor.
    model.in_norm.update(rng.normal(size=(200, 3)))
    model.delta_norm.update(0.3 * rng.normal(size=(200, 2)))
    opts = [adam_init(m, 1e-3) for m in model.members]
    losses = [train_model_step(model, opts, buf, 8, rng) for _ in range(100)]
    # Monotone until the loss reaches the normalization-drift floor.
    assert all(b <= a + 1e-12 for a, b in zip(losses[:80], losses[1:80])), "loss not monotone"
    assert losses[-1] < losses[0] * 0.01


def test_zero_delta_data_trains_to_tiny_loss():
    rng = np.random.default_rng(4)
    eps = []
    for _ in range(5):
        s = rng.normal(size=2)
        states = np.tile(s, (11, 1))
        eps.append((states, rng.uniform(-1, 1, size=(10, 1))))
    buf = _buffer_from_arrays(eps)
    model = make_ensemble(2, 1, rng, n_members=2, hidden=(16,))
    opts = [adam_init(m, 1e-2) for m in model.members]
    last = None
    for lr, steps in [(1e-2, 3000), (1e-3, 600)]:  # anneal to pass Adam's step floor
        for opt in opts:
            opt.learning_rate = lr
        for _ in range(steps):
            last = train_model_step(model, opts, buf, 64, rng)
    assert last < 1e-6


def test_member_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    model = make_ensemble(2, 1, rng, n_members=1, hidden=(8,))
    member = model.members[0]
    x = rng.normal(size=(6, 3))
    target = rng.normal(size=(6, 2))

    def loss(p):
        y, _ = mlp_forward_batch(p, x)
        return float(np.mean((y - target) ** 2))

    def grads(p):
        y, cache = mlp_forward_batch(p, x)
        g, _ = mlp_backward_batch(p, cache, 2.0 * (y - target) / y.size, True, False)
        return g

    report = finite_diff_check(member, loss, grads, tolerance=1e-4)
    assert report.passed, report.max_rel_error


def test_imagine_shapes_and_determinism():
    rng = np.random.default_rng(6)
    model = make_ensemble(2, 1, rng, n_members=2, hidden=(8,))
    start = rng.normal(size=(3, 2))
    policy = lambda s: np.tanh(s[:, :1])
    r1 = imagine(model, policy, start, horizon=1)
    assert len(r1) == 3
    assert r1[0].states.shape == (2, 2) and r1[0].actions.shape == (1, 1)
    r5a = imagine(model, policy, start, horizon=5)
    r5b = imagine(model, policy, start, horizon=5)
    for a, b in zip(r5a, r5b):
        assert np.array_equal(a.states, b.states)
        assert not a.diverged


def test_imagine_fixed_point_when_model_predicts_zero_delta():
    # Hand-built ensemble with all-zero weights and fresh normalization
    # predicts delta == 0, so rollouts stay at the start state exactly.
    rng = np.random.default_rng(7)
    model = make_ensemble(2, 1, rng, n_members=3, hidden=(8,))
    for m in model.members:
        for i in range(len(m.weights)):
            m.weights[i][:] = 0.0
            m.biases[i][:] = 0.0
    start = rng.normal(size=(4, 2))
    for roll in imagine(model, lambda s: np.zeros((s.shape[0], 1)), start, horizon=6):
        assert np.allclose(roll.states, roll.states[0], atol=1e-15)


def test_one_step_error_zero_for_exact_model():
    rng = np.random.default_rng(8)
    model = make_ensemble(2, 1, rng, n_members=2, hidden=(8,))
    for m in model.members:
        for i in range(len(m.weights)):
            m.weights[i][:] = 0.0
            m.biases[i][:] = 0.0
    s = rng.normal(size=(10, 2))
    a = rng.normal(size=(10, 1))
    assert one_step_error(model, (s, a, s.copy())) == 0.0
    err = one_step_error(model, (s, a, s + 0.1))
    assert abs(err - 2 * 0.01) < 1e-12  # each dim off by 0.1


def _oracle_member_predict(model, s, a):
    # Independent straight-numpy re-implementation of the ensemble mean.
    x = np.concatenate([s, a])
    x = (x - model.in_norm.mean) / model.in_norm.std
    outs = []
    for m in model.members:
        h = x
        for i in range(len(m.weights)):
            z = m.weights[i] @ h + m.biases[i]
            h = np.tanh(z) if i < len(m.weights) - 1 else z
        outs.append(h * model.delta_norm.std + model.delta_norm.mean)
    return s + np.mean(outs, axis=0)


def test_compound_error_matches_hand_rolled_oracle():
    rng = np.random.default_rng(9)
    model = make_ensemble(2, 1, rng, n_members=3, hidden=(8, 8))
    model.in_norm.update(rng.normal(size=(50, 3)))
    model.delta_norm.update(0.1 * rng.normal(size=(50, 2)))
    for _ in range(20):
        h = int(rng.integers(1, 8))
        states = rng.normal(size=(h + 1, 2))
        actions = rng.uniform(-1, 1, size=(h, 1))
        got = compound_error(model, states, actions)
        cur = states[0]
        total = 0.0
        for i in range(h):
            cur = _oracle_member_predict(model, cur, actions[i])
            total += np.sum((cur - states[i + 1]) ** 2)
        assert abs(got - total / h) < 1e-12


def test_compound_error_h1_equals_one_step_error():
    rng = np.random.default_rng(10)
    model = make_ensemble(2, 1, rng, n_members=2, hidden=(8,))
    states = rng.normal(size=(2, 2))
    actions = rng.uniform(-1, 1, size=(1, 1))
    ce = compound_error(model, states, actions)
    ose = one_step_error(model, (states[:1], actions, states[1:]))
    assert abs(ce - ose) < 1e-15


def test_predict_raises_on_nonfinite():
    rng = np.random.default_rng(11)
    model = make_ensemble(2, 1, rng, n_members=1, hidden=(4,))
    model.members[0].weights[0][0, 0] = 1e308
    model.members[0].weights[1][0, 0] = 1e308
    with np.errstate(over="ignore"), pytest.raises(ModelDivergenceError):
        predict(model, np.array([1e308, 0.0]), np.zeros(1))


def test_pathwise_rollout_gradient_matches_finite_differences():
    # J = w . states[H] summed over the batch, differentiated w.r.t. the
    # start state and the (fixed) action sequence via step_backward.
    rng = np.random.default_rng(12)
    model = make_ensemble(2, 1, rng, n_members=2, hidden=(8,))
    model.in_norm.update(rng.normal(size=(40, 3)))
    model.delta_norm.update(0.2 * rng.normal(size=(40, 2)))
    h = 3
    start = rng.normal(size=(2, 2))
    acts = rng.uniform(-0.5, 0.5, size=(h, 2, 1))
    w = rng.normal(size=2)

    def run(start_states, actions):
        trace = rollout_trace(model, lambda s, t: (actions[t], None), start_states, h)
        return trace, float(np.sum(trace.states[h] @ w))

    trace, _ = run(start, acts)
    d_next = np.tile(w, (2, 1))
    d_actions = np.zeros_like(acts)
    for t in range(h - 1, -1, -1):
        d_next, d_actions[t] = step_backward(model, trace, t, d_next)
    d_start = d_next

    fd_eps = 1e-6
    for b in range(2):
        for j in range(2):
            pert = start.copy()
            pert[b, j] += fd_eps
            _, up = run(pert, acts)
            pert[b, j] -= 2 * fd_eps
            _, down = run(pert, acts)
            fd = (up - down) / (2 * fd_eps)
            assert abs(fd - d_start[b, j]) < 1e-5 * max(1.0, abs(fd)), f"start[{b},{j}]"
    for t in range(h):
        for b in range(2):
            pert = acts.copy()
            pert[t, b, 0] += fd_eps
            _, up = run(start, pert)
            pert[t, b, 0] -= 2 * fd_eps
            _, down = run(start, pert)
            fd = (up - down) / (2 * fd_eps)
            assert abs(fd - d_actions[t, b, 0]) < 1e-5 * max(1.0, abs(fd)), f"action[{t},{b}]"


def test_disagreement_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    model = make_ensemble(2, 1, rng, n_members=3, hidden=(8,))
    model.in_norm.update(rng.normal(size=(40, 3)))
    model.delta_norm.update(0.2 * rng.normal(size=(40, 2)))
    start = rng.normal(size=(2, 2))
    action = rng.uniform(-0.5, 0.5, size=(1, 2, 1))

    def run(start_states, actions):
        trace = rollout_trace(model, lambda s, t: (actions[t], None), start_states, 1)
        return trace, float(np.sum(trace.disagreement[0]))

    trace, _ = run(start, action)
    d_s, d_a = disagreement_backward(model, trace, 0, np.ones(2))
    fd_eps = 1e-6
    for b in range(2):
        for j in range(2):
            pert = start.copy()
            pert[b, j] += fd_eps
            _, up = run(pert, action)
            pert[b, j] -= 2 * fd_eps
            _, down = run(pert, action)
            fd = (up - down) / (2 * fd_eps)
            assert abs(fd - d_s[b, j]) < 1e-6 + 1e-4 * abs(fd)
        pert = action.copy()
        pert[0, b, 0] += fd_eps
        _, up = run(start, pert)
        pert[0, b, 0] -= 2 * fd_eps
        _, down = run(start, pert)
        fd = (up - down) / (2 * fd_eps)
        assert abs(fd - d_a[b, 0]) < 1e-6 + 1e-4 * abs(fd)
