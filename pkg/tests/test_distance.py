"""Tests for the temporal-distance network."""

import numpy as np
import pytest
from scipy.stats import spearmanr

from munlab.distance import (
    distance,
    distance_batch,
    make_distance_net,
    reward,
    reward_backward,
    reward_batch,
    sample_pairs,
    train_distance_step,
)
from munlab.dynamics import ImaginedRollout
from munlab.errors import EmptySourceError
from munlab.numerics import adam_init


def _chain_rollouts(rng, n_rollouts=40, length=15, step=0.1):
    # Deterministic 1-D chain: s' = s + 0.1, random start.
    rolls = []
    for _ in range(n_rollouts):
        s0 = float(rng.uniform(-1.0, 2.0))
        states = (s0 + step * np.arange(length + 1))[:, None]
        rolls.append(ImaginedRollout(states=states, actions=np.zeros((length, 1))))
    return rolls


def test_untrained_output_is_in_unit_interval():
    rng = np.random.default_rng(0)
    dnet = make_distance_net(3, rng)
    s = rng.normal(size=(50, 3)) * 5
    g = rng.normal(size=(50, 3)) * 5
    d, _ = distance_batch(dnet, s, g)
    assert np.all(d >= 0.0) and np.all(d <= 1.0)
    r, _ = reward_batch(dnet, s, g)
    assert np.all(r <= 0.0) and np.all(r >= -1.0)


def test_sample_pairs_targets_match_gap():
    rng = np.random.default_rng(1)
    rolls = _chain_rollouts(rng, n_rollouts=3, length=10)
    s, g, target = sample_pairs(rolls, 200, horizon_ref=10, rng=rng)
    # On the chain the true gap is recoverable from the state difference.
    k = (g[:, 0] - s[:, 0]) / 0.1
    assert np.allclose(target, k / 10, atol=1e-9)
    assert target.min() == 0.0  # k = 0 pairs appear
    assert target.max() <= 1.0
    assert np.any(target > 0.9)  # near-full-horizon pairs appear


def test_sample_pairs_empty_raises():
    with pytest.raises(EmptySourceError):
        sample_pairs([], 5, 10, np.random.default_rng(0))


def test_overfit_small_pair_set():
    rng = np.random.default_rng(2)
    dnet = make_distance_net(2, rng, hidden=(32, 32))
    opt = adam_init(dnet.net, 3e-3)
    # 10 fixed pairs as one-step rollouts with deterministic gaps.
    states = rng.normal(size=(10, 2))
    rolls = [
        ImaginedRollout(states=np.stack([s, s + 0.5]), actions=np.zeros((1, 2)))
        for s in states
    ]
    loss = None
    for _ in range(2000):
        loss = train_distance_step(dnet, opt, rolls, 4, rng)
    assert loss is not None and loss < 1e-4, loss


def test_chain_world_distance_orders_held_out_pairs():
    rng = np.random.default_rng(3)
    dnet = make_distance_net(1, rng, horizon_ref=15)
    opt = adam_init(dnet.net, 1e-3)
    rolls = _chain_rollouts(rng, n_rollouts=60, length=15)
    for _ in range(1500):
        train_distance_step(dnet, opt, rolls, 8, rng)
    # Held-out pairs on fresh anchors.
    preds, gaps = [], []
    for s0 in np.linspace(-0.9, 1.9, 12):
        for k in range(0, 16):
            preds.append(distance(dnet, np.array([s0]), np.array([s0 + 0.1 * k])))
            gaps.append(k)
    rho = spearmanr(preds, gaps).statistic
    assert rho > 0.9, rho


def test_trained_distance_near_zero_for_same_state():
    rng = np.random.default_rng(4)
    dnet = make_distance_net(1, rng)
    opt = adam_init(dnet.net, 1e-3)
    rolls = _chain_rollouts(rng, n_rollouts=30, length=10)
    for _ in range(800):
        train_distance_step(dnet, opt, rolls, 8, rng)
    for s0 in (-0.5, 0.3, 1.2):
        assert distance(dnet, np.array([s0]), np.array([s0])) < 0.15
        assert reward(dnet, np.array([s0]), np.array([s0])) > -0.15


def test_reward_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    dnet = make_distance_net(2, rng, hidden=(16,))
    s = rng.normal(size=(3, 2))
    g = rng.normal(size=(3, 2))
    w = rng.normal(size=3)

    def objective(states):
        r, _ = reward_batch(dnet, states, g)
        return float(w @ r)

    _, cache = reward_batch(dnet, s, g)
    d_s, d_g = reward_backward(dnet, cache, w)
    eps = 1e-6
    for b in range(3):
        for j in range(2):
            pert = s.copy()
            pert[b, j] += eps
            up = objective(pert)
            pert[b, j] -= 2 * eps
            down = objective(pert)
            fd = (up - down) / (2 * eps)
            rel = abs(fd - d_s[b, j]) / max(abs(fd), abs(d_s[b, j]), 1e-3)
            assert rel < 1e-4, f"state[{b},{j}]: fd {fd} vs {d_s[b, j]}"
    assert d_g.shape == g.shape
