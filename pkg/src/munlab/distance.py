"""Temporal-distance network: how many steps apart are two states?

The network maps a concatenated state pair to a sigmoid output trained
toward k / horizon_ref for pairs k steps apart inside imagined rollouts, so
its output lives in [0, 1] where 1 means "about a full imagination horizon
away (or more)".  The goal-reaching reward is the negated distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ImaginedRollout
from .errors import DimensionError, EmptySourceError
from .numerics import (
    AdamState,
    MlpCache,
    MlpParams,
    adam_step,
    init_mlp,
    mlp_backward_batch,
    mlp_forward_batch,
)


@dataclass
class DistanceNet:
    """Sigmoid-output MLP over state pairs plus its target normalizer."""

    net: MlpParams
    horizon_ref: int


def make_distance_net(
    state_dim: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (64, 64),
    horizon_ref: int = 15,
    activation: str = "relu",
) -> DistanceNet:
    net = init_mlp([2 * state_dim, *hidden, 1], rng, activation=activation,
                   output_transform="sigmoid")
    return DistanceNet(net=net, horizon_ref=horizon_ref)


def distance_batch(
    dnet: DistanceNet, states: np.ndarray, goals: np.ndarray
) -> tuple[np.ndarray, MlpCache]:
    """Predicted temporal distance for each (state, goal) row; returns (values, cache)."""
    if states.shape != goals.shape:
        raise DimensionError(f"states {states.shape} and goals {goals.shape} differ")
    x = np.concatenate([states, goals], axis=1)
    y, cache = mlp_forward_batch(dnet.net, x)
    return y[:, 0], cache


def distance(dnet: DistanceNet, state: np.ndarray, goal: np.ndarray) -> float:
    d, _ = distance_batch(dnet, np.asarray(state)[None, :], np.asarray(goal)[None, :])
    return float(d[0])


def reward_batch(
    dnet: DistanceNet, states: np.ndarray, goals: np.ndarray
) -> tuple[np.ndarray, MlpCache]:
    """Goal-reaching reward: negated temporal distance (in [-1, 0])."""
    d, cache = distance_batch(dnet, states, goals)
    return -d, cache


def reward(dnet: DistanceNet, state: np.ndarray, goal: np.ndarray) -> float:
    return -distance(dnet, state, goal)


def reward_backward(
    dnet: DistanceNet, cache: MlpCache, d_reward: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop d(objective)/d(reward) to the (state, goal) inputs.

    Returns (d_states, d_goals); network parameters are left untouched.
    """
    d_out = -np.asarray(d_reward, dtype=np.float64)[:, None]
    _, d_x = mlp_backward_batch(dnet.net, cache, d_out, False, True)
    half = dnet.net.in_dim // 2
    return d_x[:, :half], d_x[:, half:]


def sample_pairs(
    rollouts: list[ImaginedRollout],
    pairs_per_rollout: int,
    horizon_ref: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (state, later state, k/horizon_ref) training pairs from rollouts.

    For each pair the anchor index t is uniform over the rollout and the gap
    k is uniform over [0, length - t].
    """
    if not rollouts:
        raise EmptySourceError("no rollouts to sample pairs from")
    firsts, seconds, targets = [], [], []
    for roll in rollouts:
        length = roll.actions.shape[0]
        t = rng.integers(0, length + 1, size=pairs_per_rollout)
        k = rng.integers(0, length - t + 1)
        firsts.append(roll.states[t])
        seconds.append(roll.states[t + k])
        targets.append(k / horizon_ref)
    return np.concatenate(firsts), np.concatenate(seconds), np.concatenate(targets)


def train_distance_step(
    dnet: DistanceNet,
    opt: AdamState,
    rollouts: list[ImaginedRollout],
    pairs_per_rollout: int,
    rng: np.random.Generator,
) -> float:
    """One MSE regression step on freshly sampled rollout pairs; returns the loss."""
    s, g, target = sample_pairs(rollouts, pairs_per_rollout, dnet.horizon_ref, rng)
    d, cache = distance_batch(dnet, s, g)
    diff = d - target
    loss = float(np.mean(diff * diff))
    d_out = (2.0 * diff / diff.size)[:, None]
    grads, _ = mlp_backward_batch(dnet.net, cache, d_out, True, False)
    adam_step(dnet.net, grads, opt)
    return loss
