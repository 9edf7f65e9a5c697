"""Goal-conditioned actor-critic trained by backprop through imagination.

The actor outputs a tanh-squashed action mean (Gaussian noise is added
before the squash when acting stochastically, so samples always respect the
action bounds).  Training rolls the dynamics-ensemble mean forward for a
short horizon, scores the visited states with a reward head -- negated
temporal distance for the goal agent, ensemble disagreement for the
explorer -- computes lambda-returns with critic bootstraps, and ascends the
mean return by a hand-rolled reverse sweep through reward head, critic,
dynamics members, squash, and policy network (reparameterized pathwise
gradients).  The critic is regressed onto the same lambda-returns.

Everything here mutates only its own parameters: the dynamics model and
distance net are frozen inputs to these updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distance import DistanceNet, reward_backward, reward_batch
from .dynamics import (
    DynamicsEnsemble,
    ImaginationTrace,
    ImaginedRollout,
    disagreement_backward,
    predict,
    rollout_trace,
    step_backward,
)
from .errors import ConfigurationError, DimensionError
from .numerics import (
    AdamState,
    MlpParams,
    adam_step,
    init_mlp,
    mlp_backward_batch,
    mlp_forward_batch,
    zero_grads,
)
from .replay import ReplayBuffer


@dataclass
class GoalPolicy:
    """Deterministic-mean policy over (state, goal) with bounded outputs."""

    net: MlpParams
    action_low: np.ndarray
    action_high: np.ndarray
    action_noise_std: float = 0.1


@dataclass
class GoalCritic:
    """Value of chasing ``goal`` from ``state`` under the goal policy."""

    net: MlpParams


@dataclass
class ExplorerPolicy:
    """Goal-free exploration policy and its value net (intrinsic reward)."""

    net: MlpParams
    critic_net: MlpParams
    action_low: np.ndarray
    action_high: np.ndarray
    action_noise_std: float = 0.1


def make_goal_policy(
    state_dim: int,
    action_low: np.ndarray,
    action_high: np.ndarray,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (64, 64),
    action_noise_std: float = 0.1,
) -> GoalPolicy:
    net = init_mlp([2 * state_dim, *hidden, action_low.shape[0]], rng, activation="tanh")
    return GoalPolicy(net, np.asarray(action_low, float), np.asarray(action_high, float),
                      action_noise_std)


def make_goal_critic(
    state_dim: int, rng: np.random.Generator, hidden: tuple[int, ...] = (64, 64)
) -> GoalCritic:
    return GoalCritic(init_mlp([2 * state_dim, *hidden, 1], rng, activation="tanh"))


def make_explorer(
    state_dim: int,
    action_low: np.ndarray,
    action_high: np.ndarray,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (64, 64),
    action_noise_std: float = 0.1,
) -> ExplorerPolicy:
    net = init_mlp([state_dim, *hidden, action_low.shape[0]], rng, activation="tanh")
    critic = init_mlp([state_dim, *hidden, 1], rng, activation="tanh")
    return ExplorerPolicy(net, critic, np.asarray(action_low, float),
                          np.asarray(action_high, float), action_noise_std)


def _squash(u: np.ndarray, low: np.ndarray, high: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    th = np.tanh(u)
    return (low + high) / 2.0 + (high - low) / 2.0 * th, th


def act(
    policy: GoalPolicy,
    state: np.ndarray,
    goal: np.ndarray,
    mode: str = "deterministic",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Action for one (state, goal); stochastic mode adds pre-squash noise."""
    x = np.concatenate([state, goal])[None, :]
    u, _ = mlp_forward_batch(policy.net, x)
    if mode == "stochastic":
        if rng is None:
            raise ConfigurationError("stochastic act needs an rng")
        u = u + policy.action_noise_std * rng.standard_normal(u.shape)
    elif mode != "deterministic":
        raise ConfigurationError(f"unknown act mode {mode!r}")
    a, _ = _squash(u, policy.action_low, policy.action_high)
    return a[0]


def explorer_act(
    explorer: ExplorerPolicy,
    state: np.ndarray,
    mode: str = "stochastic",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    x = np.asarray(state, dtype=np.float64)[None, :]
    u, _ = mlp_forward_batch(explorer.net, x)
    if mode == "stochastic":
        if rng is None:
            raise ConfigurationError("stochastic act needs an rng")
        u = u + explorer.action_noise_std * rng.standard_normal(u.shape)
    a, _ = _squash(u, explorer.action_low, explorer.action_high)
    return a[0]


def explorer_values(explorer: ExplorerPolicy, states: np.ndarray) -> np.ndarray:
    v, _ = mlp_forward_batch(explorer.critic_net, np.atleast_2d(states))
    return v[:, 0]


def goal_value(critic: GoalCritic, state: np.ndarray, goal: np.ndarray) -> float:
    v, _ = mlp_forward_batch(critic.net, np.concatenate([state, goal])[None, :])
    return float(v[0, 0])


def intrinsic_reward(model: DynamicsEnsemble, state: np.ndarray, action: np.ndarray) -> float:
    """Ensemble disagreement as an exploration reward (needs >= 2 members)."""
    if model.n_members < 2:
        raise ConfigurationError("intrinsic reward undefined for a single-member ensemble")
    _, dis = predict(model, state, action)
    return dis


def lambda_returns(
    rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
) -> np.ndarray:
    """TD(lambda) returns over imagined steps.

    rewards has shape (H, B) with rewards[t] earned entering states[t+1];
    values has shape (H+1, B).  R_t = r_t + gamma * ((1-lam) V_{t+1} +
    lam R_{t+1}), bootstrapped with R_H = V_H.
    """
    h = rewards.shape[0]
    if values.shape[0] != h + 1:
        raise DimensionError("values must have one more row than rewards")
    out = np.empty_like(rewards)
    nxt = values[h]
    for t in range(h - 1, -1, -1):
        nxt = rewards[t] + gamma * ((1.0 - lam) * values[t + 1] + lam * nxt)
        out[t] = nxt
    return out


def _return_adjoints(h: int, gamma: float, lam: float, denom: float) -> tuple[np.ndarray, np.ndarray]:
    """Adjoints of J = sum_t R_t / denom w.r.t. rewards and values.

    Returns (d_reward (h,), d_value (h+1,)); d_value[0] is 0 because R_0
    never references V(s_0).
    """
    rho = np.empty(h)
    prev = 0.0
    for t in range(h):
        prev = 1.0 / denom + gamma * lam * prev
        rho[t] = prev
    d_value = np.zeros(h + 1)
    d_value[1:h] = gamma * (1.0 - lam) * rho[: h - 1]
    d_value[h] = gamma * rho[h - 1]
    return rho, d_value


@dataclass
class ImaginationUpdate:
    """Everything produced by one imagination pass (used by both trainers)."""

    objective: float
    policy_grads: object
    trace: ImaginationTrace
    values: np.ndarray  # (H+1, B)
    returns: np.ndarray  # (H, B)
    critic_cache: object
    critic_inputs_shape: tuple
    mask: np.ndarray  # (B,) rows that stayed finite
    rewards: np.ndarray  # (H, B)


def _imagination_pass(
    policy_net: MlpParams,
    critic_net: MlpParams,
    model: DynamicsEnsemble,
    start_states: np.ndarray,
    goals: np.ndarray | None,
    dnet: DistanceNet | None,
    eps: np.ndarray | None,
    horizon: int,
    gamma: float,
    lam: float,
    noise_std: float,
    action_low: np.ndarray,
    action_high: np.ndarray,
    action_reg: float = 0.0,
) -> ImaginationUpdate:
    """Forward + backward through an imagined rollout.

    The reward head is the negated temporal distance when ``dnet`` is given
    (goal-conditioned), otherwise ensemble disagreement (explorer).  The
    objective is the mean lambda-return over live rows minus
    ``action_reg * mean(u^2)`` over the pre-squash action means, which keeps
    the tanh squash out of its flat tails (a saturated squash would
    otherwise block the pathwise gradient permanently).  Returns that
    objective and its gradient w.r.t. the policy parameters, plus the pieces
    the critic update needs.
    """
    b, state_dim = start_states.shape
    squash_cache: list[np.ndarray] = []
    mean_cache: list[np.ndarray] = []

    def net_input(states: np.ndarray) -> np.ndarray:
        return states if goals is None else np.concatenate([states, goals], axis=1)

    def act_fn(states: np.ndarray, t: int):
        u, cache = mlp_forward_batch(policy_net, net_input(states))
        mean_cache.append(u)
        if eps is not None:
            u = u + noise_std * eps[t]
        a, th = _squash(u, action_low, action_high)
        squash_cache.append(th)
        return a, cache

    trace = rollout_trace(model, act_fn, start_states, horizon)
    mask = trace.alive[horizon].copy()  # drop rows that diverged anywhere
    live = float(mask.sum())

    if dnet is not None:
        flat_states = trace.states[1:].reshape(horizon * b, state_dim)
        flat_goals = np.tile(goals, (horizon, 1))
        flat_rewards, dnet_cache = reward_batch(dnet, flat_states, flat_goals)
        rewards = flat_rewards.reshape(horizon, b)
    else:
        rewards = trace.disagreement
    flat_all = trace.states.reshape((horizon + 1) * b, state_dim)
    critic_in = flat_all if goals is None else np.concatenate(
        [flat_all, np.tile(goals, (horizon + 1, 1))], axis=1)
    values_flat, critic_cache = mlp_forward_batch(critic_net, critic_in)
    values = values_flat[:, 0].reshape(horizon + 1, b)
    returns = lambda_returns(rewards, values, gamma, lam)

    if live == 0.0:
        return ImaginationUpdate(0.0, zero_grads(policy_net), trace, values, returns,
                                 critic_cache, (horizon + 1, b), mask, rewards)

    denom = horizon * live
    act_dim = action_low.shape[0]
    reg_scale = action_reg / (denom * act_dim)
    means = np.stack(mean_cache)  # (H, B, act_dim)
    penalty = reg_scale * float(((means * means) * mask[None, :, None]).sum())
    objective = float((returns * mask).sum() / denom) - penalty
    rho, d_value_coef = _return_adjoints(horizon, gamma, lam, denom)

    d_states = np.zeros_like(trace.states)
    # Value path: one batched critic backward with per-step coefficients.
    d_v_flat = (d_value_coef[:, None] * mask).reshape(-1, 1)
    _, d_vin = mlp_backward_batch(critic_net, critic_cache, d_v_flat, False, True)
    d_states += d_vin[:, :state_dim].reshape(horizon + 1, b, state_dim)
    # Reward path.
    if dnet is not None:
        d_r_flat = (rho[:, None] * mask).reshape(-1)
        d_rs, _ = reward_backward(dnet, dnet_cache, d_r_flat)
        d_states[1:] += d_rs.reshape(horizon, b, state_dim)
    # Dynamics + policy sweep.
    policy_grads = zero_grads(policy_net)
    for t in range(horizon - 1, -1, -1):
        d_next = d_states[t + 1]
        d_s, d_a = step_backward(model, trace, t, d_next)
        if dnet is None:
            dis_s, dis_a = disagreement_backward(model, trace, t, rho[t] * mask)
            d_s = d_s + dis_s
            d_a = d_a + dis_a
        th = squash_cache[t]
        d_u = d_a * (action_high - action_low) / 2.0 * (1.0 - th * th)
        if action_reg:
            d_u = d_u - (2.0 * reg_scale) * means[t] * mask[:, None]
        g_t, d_x = mlp_backward_batch(policy_net, trace.action_caches[t], d_u, True, True)
        policy_grads.add_(g_t)
        d_states[t] += d_s + d_x[:, :state_dim]
    policy_grads.scale_(-1.0)  # ascend the objective

    return ImaginationUpdate(objective, policy_grads, trace, values, returns,
                             critic_cache, (horizon + 1, b), mask, rewards)


def _critic_regression(
    critic_net: MlpParams,
    update: ImaginationUpdate,
    opt: AdamState,
) -> float:
    """Regress V(s_t) toward the (stop-gradient) lambda-returns, t < H."""
    h, b = update.returns.shape
    live = float(update.mask.sum())
    if live == 0.0:
        return 0.0
    diff = (update.values[:h] - update.returns) * update.mask
    count = h * live
    loss = float((diff * diff).sum() / count)
    d_out = np.zeros((h + 1, b))
    d_out[:h] = 2.0 * diff / count
    grads, _ = mlp_backward_batch(critic_net, update.critic_cache, d_out.reshape(-1, 1), True, False)
    adam_step(critic_net, grads, opt)
    return loss


def _rollouts_from_trace(trace: ImaginationTrace) -> list[ImaginedRollout]:
    h = trace.actions.shape[0]
    return [
        ImaginedRollout(
            states=trace.states[:, i].copy(),
            actions=trace.actions[:, i].copy(),
            diverged=bool(trace.alive[h, i] == 0.0),
        )
        for i in range(trace.states.shape[1])
    ]


def sample_goal_mix(
    buffer_goals_rng: np.random.Generator,
    batch_size: int,
    subgoals: np.ndarray | None,
    env_goal_sampler,
) -> np.ndarray:
    """Half subgoal-set rows, half environment goals (all env when no set)."""
    n_sub = batch_size // 2 if subgoals is not None and len(subgoals) else 0
    rows = []
    if n_sub:
        idx = buffer_goals_rng.integers(0, len(subgoals), size=n_sub)
        rows.append(subgoals[idx])
    rows.append(np.stack([env_goal_sampler(buffer_goals_rng) for _ in range(batch_size - n_sub)]))
    return np.concatenate(rows, axis=0)


def train_goal_agent_step(
    policy: GoalPolicy,
    critic: GoalCritic,
    model: DynamicsEnsemble,
    dnet: DistanceNet,
    buffer: ReplayBuffer,
    actor_opt: AdamState,
    critic_opt: AdamState,
    rng: np.random.Generator,
    env_goal_sampler,
    subgoal_set=None,
    batch_size: int = 64,
    horizon: int = 15,
    gamma: float = 0.99,
    lam: float = 0.95,
    action_reg: float = 0.0,
) -> tuple[dict, list[ImaginedRollout]]:
    """One imagination update of the goal policy and critic.

    Start states are sampled uniformly from the whole buffer; imagination
    goals are a 50/50 mix of current subgoals and environment goals.  Returns
    diagnostics and the (detached) imagined rollouts for distance training.
    """
    start = buffer.sample_states(batch_size, rng)
    subgoals = subgoal_set.goals if subgoal_set is not None else None
    goals = sample_goal_mix(rng, batch_size, subgoals, env_goal_sampler)
    eps = rng.standard_normal((horizon, batch_size, policy.action_low.shape[0]))
    update = _imagination_pass(
        policy.net, critic.net, model, start, goals, dnet, eps,
        horizon, gamma, lam, policy.action_noise_std, policy.action_low, policy.action_high,
        action_reg=action_reg,
    )
    adam_step(policy.net, update.policy_grads, actor_opt)
    critic_loss = _critic_regression(critic.net, update, critic_opt)
    diagnostics = {
        "actor_objective": update.objective,
        "critic_loss": critic_loss,
        "mean_return": float(update.returns.mean()),
        "mean_reward": float(update.rewards.mean()),
        "dropped_rows": int(batch_size - update.mask.sum()),
    }
    return diagnostics, _rollouts_from_trace(update.trace)


def train_explorer_step(
    explorer: ExplorerPolicy,
    model: DynamicsEnsemble,
    buffer: ReplayBuffer,
    actor_opt: AdamState,
    critic_opt: AdamState,
    rng: np.random.Generator,
    batch_size: int = 64,
    horizon: int = 15,
    gamma: float = 0.99,
    lam: float = 0.95,
    action_reg: float = 0.0,
) -> dict:
    """One imagination update of the explorer on the disagreement reward."""
    if model.n_members < 2:
        raise ConfigurationError("explorer training needs an ensemble with >= 2 members")
    start = buffer.sample_states(batch_size, rng)
    eps = rng.standard_normal((horizon, batch_size, explorer.action_low.shape[0]))
    update = _imagination_pass(
        explorer.net, explorer.critic_net, model, start, None, None, eps,
        horizon, gamma, lam, explorer.action_noise_std, explorer.action_low, explorer.action_high,
        action_reg=action_reg,
    )
    adam_step(explorer.net, update.policy_grads, actor_opt)
    critic_loss = _critic_regression(explorer.critic_net, update, critic_opt)
    return {
        "actor_objective": update.objective,
        "critic_loss": critic_loss,
        "mean_return": float(update.returns.mean()),
        "mean_reward": float(update.rewards.mean()),
        "dropped_rows": int(batch_size - update.mask.sum()),
    }
