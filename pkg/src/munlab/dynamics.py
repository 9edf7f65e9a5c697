"""Deterministic MLP dynamics ensemble with imagination rollouts.

Each ensemble member is an MLP mapping normalized (state, action) to a
normalized state delta; predictions are de-normalized, added to the input
state, and averaged over members.  The per-dimension variance of member
predictions (averaged over dimensions) is the disagreement signal used as
the explorer's intrinsic reward.

Imagination rollouts follow the ensemble mean under a caller-supplied action
function and cache every activation, so the agent can backpropagate a
pathwise objective through the rollout; ``step_backward`` and
``disagreement_backward`` implement the hand-rolled reverse pass for one
step.  Model-quality probes (``one_step_error``, ``compound_error``) live
here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, ModelDivergenceError
from .numerics import (
    AdamState,
    MlpCache,
    MlpParams,
    adam_step,
    init_mlp,
    mlp_backward_batch,
    mlp_forward_batch,
)
from .replay import ReplayBuffer, Transition

_STD_FLOOR = 1e-6


@dataclass
class RunningNorm:
    """Per-dimension running mean/variance (Welford, batched updates)."""

    mean: np.ndarray
    m2: np.ndarray
    count: float = 0.0

    @classmethod
    def for_dim(cls, dim: int) -> "RunningNorm":
        return cls(mean=np.zeros(dim), m2=np.zeros(dim))

    def update(self, batch: np.ndarray) -> None:
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_m2 + delta * delta * (self.count * n / total)
        self.count = total

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.maximum(np.sqrt(self.m2 / self.count), _STD_FLOOR)


@dataclass
class DynamicsEnsemble:
    """Ensemble of delta-predicting MLPs plus input/target normalization."""

    members: list[MlpParams]
    in_norm: RunningNorm
    delta_norm: RunningNorm
    state_dim: int
    action_dim: int

    @property
    def n_members(self) -> int:
        return len(self.members)


def make_ensemble(
    state_dim: int,
    action_dim: int,
    rng: np.random.Generator,
    n_members: int = 4,
    hidden: tuple[int, ...] = (128, 128),
) -> DynamicsEnsemble:
    if n_members < 1:
        raise ConfigurationError("ensemble needs at least one member")
    sizes = [state_dim + action_dim, *hidden, state_dim]
    members = [init_mlp(sizes, rng, activation="tanh") for _ in range(n_members)]
    return DynamicsEnsemble(
        members=members,
        in_norm=RunningNorm.for_dim(state_dim + action_dim),
        delta_norm=RunningNorm.for_dim(state_dim),
        state_dim=state_dim,
        action_dim=action_dim,
    )


def _member_forward(
    model: DynamicsEnsemble, states: np.ndarray, actions: np.ndarray
) -> tuple[np.ndarray, np.ndarray, list[MlpCache]]:
    """Forward every member; returns (member deltas (E,B,d), mean next states, caches)."""
    x = np.concatenate([states, actions], axis=1)
    x_norm = (x - model.in_norm.mean) / model.in_norm.std
    deltas = np.empty((model.n_members, states.shape[0], model.state_dim))
    caches = []
    d_std, d_mean = model.delta_norm.std, model.delta_norm.mean
    for i, member in enumerate(model.members):
        y, cache = mlp_forward_batch(member, x_norm)
        deltas[i] = y * d_std + d_mean
        caches.append(cache)
    return deltas, states + deltas.mean(axis=0), caches


def _disagreement(deltas: np.ndarray) -> np.ndarray:
    """Mean over dimensions of the member variance: (E,B,d) -> (B,)."""
    return deltas.var(axis=0).mean(axis=1)


def predict_batch(
    model: DynamicsEnsemble, states: np.ndarray, actions: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble-mean next states and disagreement for a batch."""
    if states.shape[1] != model.state_dim or actions.shape[1] != model.action_dim:
        raise DimensionError(f"bad shapes {states.shape}, {actions.shape}")
    deltas, mean_next, _ = _member_forward(model, states, actions)
    if not np.isfinite(mean_next).all():
        raise ModelDivergenceError("non-finite dynamics prediction")
    return mean_next, _disagreement(deltas)


def predict(
    model: DynamicsEnsemble, state: np.ndarray, action: np.ndarray
) -> tuple[np.ndarray, float]:
    """Single-input form of predict_batch."""
    mean_next, dis = predict_batch(
        model, np.asarray(state, dtype=np.float64)[None, :],
        np.asarray(action, dtype=np.float64)[None, :],
    )
    return mean_next[0], float(dis[0])


def train_model_step(
    model: DynamicsEnsemble,
    opt_states: list[AdamState],
    buffer: ReplayBuffer,
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    """One ensemble update: each member fits an independently-drawn batch.

    Normalization statistics are refreshed from the drawn batches before the
    losses are computed.  Returns the mean member MSE (on normalized deltas).
    """
    batches = [buffer.sample_transition_arrays(batch_size, rng) for _ in model.members]
    for s, a, s2 in batches:
        model.in_norm.update(np.concatenate([s, a], axis=1))
        model.delta_norm.update(s2 - s)
    in_mean, in_std = model.in_norm.mean, model.in_norm.std
    d_mean, d_std = model.delta_norm.mean, model.delta_norm.std
    total = 0.0
    for member, opt, (s, a, s2) in zip(model.members, opt_states, batches):
        x = (np.concatenate([s, a], axis=1) - in_mean) / in_std
        target = ((s2 - s) - d_mean) / d_std
        y, cache = mlp_forward_batch(member, x)
        diff = y - target
        total += float(np.mean(diff * diff))
        grads, _ = mlp_backward_batch(member, cache, 2.0 * diff / diff.size, True, False)
        adam_step(member, grads, opt)
    return total / model.n_members


@dataclass
class ImaginationTrace:
    """Batched imagination rollout with everything needed for backprop.

    states[t] is the batch of imagined states at step t (states[0] real);
    ``member_caches[t][i]`` holds member i's activations for step t, whose
    last entry is the member's normalized delta output.  ``alive[t]`` masks
    batch rows still finite at step t; rows that diverge are frozen and
    excluded from gradients and losses.
    """

    states: np.ndarray  # (H+1, B, d)
    actions: np.ndarray  # (H, B, a)
    disagreement: np.ndarray  # (H, B)
    action_caches: list  # per step, whatever act_fn cached
    member_caches: list[list[MlpCache]]  # per step, per member
    alive: np.ndarray  # (H+1, B) float 0/1
    diverged: bool


def rollout_trace(
    model: DynamicsEnsemble, act_fn, start_states: np.ndarray, horizon: int
) -> ImaginationTrace:
    """Roll the ensemble mean for ``horizon`` steps under ``act_fn``.

    ``act_fn(states, t)`` returns (actions, cache); the cache is stored
    untouched for the caller's backward pass.
    """
    b, d = start_states.shape
    states = np.empty((horizon + 1, b, d))
    states[0] = start_states
    actions = np.empty((horizon, b, model.action_dim))
    disagreement = np.zeros((horizon, b))
    alive = np.ones((horizon + 1, b))
    action_caches = []
    member_caches = []
    diverged = False
    for t in range(horizon):
        a_t, a_cache = act_fn(states[t], t)
        actions[t] = a_t
        action_caches.append(a_cache)
        deltas, mean_next, caches = _member_forward(model, states[t], a_t)
        member_caches.append(caches)
        dis_t = _disagreement(deltas)
        ok = np.isfinite(mean_next).all(axis=1) & np.isfinite(dis_t)
        step_alive = alive[t] * ok
        if not ok.all():
            diverged = True
            mean_next = np.where(ok[:, None], mean_next, states[t])
            dis_t = np.where(ok, dis_t, 0.0)
        states[t + 1] = mean_next
        disagreement[t] = dis_t
        alive[t + 1] = step_alive
    return ImaginationTrace(
        states, actions, disagreement, action_caches, member_caches, alive, diverged
    )


def step_backward(
    model: DynamicsEnsemble, trace: ImaginationTrace, t: int, d_next: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop d(objective)/d(states[t+1]) through imagination step t.

    Returns (d_states[t], d_actions[t]).  The identity path of the delta
    parameterization (next = state + mean delta) plus each member's network
    path are combined; normalization is unwound on both sides.
    """
    live = trace.alive[t + 1][:, None]
    d_next = d_next * live
    d_state = d_next.copy()
    acc = None
    scale = model.delta_norm.std / model.n_members
    for i, member in enumerate(model.members):
        _, d_x = mlp_backward_batch(
            member, trace.member_caches[t][i], d_next * scale, False, True
        )
        acc = d_x if acc is None else acc + d_x
    acc = acc / model.in_norm.std
    d_state += acc[:, : model.state_dim]
    return d_state, acc[:, model.state_dim :]


def disagreement_backward(
    model: DynamicsEnsemble, trace: ImaginationTrace, t: int, d_r: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop d(objective)/d(disagreement[t]) to (d_states[t], d_actions[t])."""
    d_r = d_r * trace.alive[t + 1]
    d_std = model.delta_norm.std
    outs = np.stack(
        [trace.member_caches[t][i].activations[-1] for i in range(model.n_members)]
    )  # (E, B, d) normalized outputs
    deltas = outs * d_std + model.delta_norm.mean
    centered = deltas - deltas.mean(axis=0)
    e, _, dim = deltas.shape
    acc = None
    for i, member in enumerate(model.members):
        d_y = d_r[:, None] * (2.0 / (e * dim)) * centered[i] * d_std
        _, d_x = mlp_backward_batch(member, trace.member_caches[t][i], d_y, False, True)
        acc = d_x if acc is None else acc + d_x
    acc = acc / model.in_norm.std
    return acc[:, : model.state_dim], acc[:, model.state_dim :]


@dataclass
class ImaginedRollout:
    """One imagined trajectory (states row 0 is the real start state)."""

    states: np.ndarray  # (H+1, d)
    actions: np.ndarray  # (H, a)
    diverged: bool = False


def imagine(
    model: DynamicsEnsemble, policy_fn, start_states: np.ndarray, horizon: int
) -> list[ImaginedRollout]:
    """Imagination rollouts under ``policy_fn(states_batch) -> actions_batch``."""
    start_states = np.atleast_2d(np.asarray(start_states, dtype=np.float64))
    trace = rollout_trace(model, lambda s, t: (policy_fn(s), None), start_states, horizon)
    out = []
    for b in range(start_states.shape[0]):
        out.append(
            ImaginedRollout(
                states=trace.states[:, b].copy(),
                actions=trace.actions[:, b].copy(),
                diverged=bool(trace.alive[horizon, b] == 0.0),
            )
        )
    return out


def _probe_arrays(probe) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(probe, tuple):
        return probe
    if probe and isinstance(probe[0], Transition):
        s = np.stack([tr.state for tr in probe])
        a = np.stack([tr.action for tr in probe])
        s2 = np.stack([tr.next_state for tr in probe])
        return s, a, s2
    raise DimensionError("probe must be (states, actions, next_states) or a list of Transitions")


def one_step_error(model: DynamicsEnsemble, probe) -> float:
    """Mean squared L2 error of the ensemble-mean one-step prediction."""
    s, a, s2 = _probe_arrays(probe)
    pred, _ = predict_batch(model, s, a)
    return float(np.mean(np.sum((pred - s2) ** 2, axis=1)))


def compound_error(model: DynamicsEnsemble, states: np.ndarray, actions: np.ndarray) -> float:
    """Open-loop error: replay real actions from the real start state.

    With predictions s_hat_0 = s_0 and s_hat_i = predict(s_hat_{i-1},
    a_{i-1}), returns (1/h) * sum_{i=1..h} ||s_hat_i - s_i||^2 over the
    h = len(actions) steps.
    """
    h = actions.shape[0]
    if h == 0:
        raise DimensionError("compound_error needs at least one step")
    if states.shape[0] != h + 1:
        raise DimensionError("states must have one more row than actions")
    cur = states[0][None, :]
    total = 0.0
    for i in range(h):
        cur, _ = predict_batch(model, cur, actions[i][None, :])
        total += float(np.sum((cur[0] - states[i + 1]) ** 2))
    return total / h
