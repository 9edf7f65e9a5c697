"""The training loop: collect, plan subgoals, update, evaluate.

One training iteration collects an environment-goal episode (always), plans
a fresh subgoal set when due, collects the method's directed episode (MUN:
subgoal-leg episode; MEGA-G / PEG-G: alternating Go-Explore episode;
gc_only: nothing extra), then applies the configured number of model,
agent, and distance updates.  Metric rows are appended on the evaluation
cadence and rendered as CSV.

Reproducibility: all randomness flows through named, independently seeded
generator streams (env, policy_noise, model_train, agent_train, subgoal,
eval, init), so a (config, seed) pair fully determines every emitted byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..agent import (
    ExplorerPolicy,
    GoalCritic,
    GoalPolicy,
    _squash,
    act,
    explorer_act,
    explorer_values,
    make_explorer,
    make_goal_critic,
    make_goal_policy,
    train_explorer_step,
    train_goal_agent_step,
)
from ..distance import DistanceNet, distance, make_distance_net, train_distance_step
from ..dynamics import (
    DynamicsEnsemble,
    compound_error,
    imagine,
    make_ensemble,
    one_step_error,
    train_model_step,
)
from ..envs import Env, make_env
from ..errors import ModelDivergenceError, TrainingDivergenceError
from ..numerics import AdamState, adam_init, mlp_forward_batch
from ..replay import Episode, ReplayBuffer, SubgoalLeg, directional_coverage
from ..subgoals import (
    SubgoalSet,
    dad,
    exploration_potential_goal,
    fit_kde,
    fixed_interval_subgoals,
    kde_min_density_goal,
)
from .config import GO_EXPLORE_METHODS, MUN_METHODS, ExperimentConfig, resolve_config
from .evaluation import evaluate_success

RNG_STREAMS = ("env", "policy_noise", "model_train", "agent_train", "subgoal", "eval", "init")


@dataclass
class MetricsRecord:
    """One row of the metrics history."""

    env_step: int
    success_rate: float
    one_step_err: float
    compound_err: float
    bidir_frac: float
    subgoal_reach_rate: float

    def as_row(self) -> list[float]:
        return [self.env_step, self.success_rate, self.one_step_err,
                self.compound_err, self.bidir_frac, self.subgoal_reach_rate]


CSV_HEADER = "step,success_rate,one_step_err,compound_err,bidir_frac,subgoal_reach_rate"


def metrics_to_csv(rows: list[MetricsRecord]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.env_step},{float(r.success_rate)!r},{float(r.one_step_err)!r},"
            f"{float(r.compound_err)!r},{float(r.bidir_frac)!r},"
            f"{float(r.subgoal_reach_rate)!r}"
        )
    return "\n".join(lines) + "\n"


@dataclass
class TrainState:
    """Everything the loop mutates, bundled for checkpointing."""

    config: ExperimentConfig
    env: Env
    buffer: ReplayBuffer
    model: DynamicsEnsemble
    model_opts: list[AdamState]
    dnet: DistanceNet
    dnet_opt: AdamState
    policy: GoalPolicy
    actor_opt: AdamState
    critic: GoalCritic
    critic_opt: AdamState
    rngs: dict[str, np.random.Generator]
    explorer: ExplorerPolicy | None = None
    explorer_actor_opt: AdamState | None = None
    explorer_critic_opt: AdamState | None = None
    subgoal_set: SubgoalSet | None = None
    iteration: int = 0
    env_steps: int = 0
    metrics: list[MetricsRecord] = field(default_factory=list)
    legs_reached: int = 0  # subgoal legs since the last metrics row
    legs_total: int = 0


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(RNG_STREAMS, children)}


def build_train_state(config: ExperimentConfig) -> TrainState:
    """Fresh training state (applies method presets, validates the config)."""
    cfg = resolve_config(config)
    env = make_env(cfg.env_id)
    rngs = make_rngs(cfg.seed)
    init = rngs["init"]
    d, low, high = env.spec.state_dim, env.spec.action_low, env.spec.action_high
    model = make_ensemble(d, env.spec.action_dim, init, n_members=cfg.model_members,
                          hidden=(cfg.model_hidden,) * 2)
    model_opts = [adam_init(m, learning_rate=cfg.model_lr) for m in model.members]
    dnet = make_distance_net(
        d, init, hidden=(cfg.distance_hidden,) * 2, horizon_ref=cfg.distance_horizon_ref
    )
    policy = make_goal_policy(
        d, low, high, init, hidden=(cfg.policy_hidden,) * 2,
        action_noise_std=cfg.action_noise_std,
    )
    critic = make_goal_critic(d, init, hidden=(cfg.policy_hidden,) * 2)
    state = TrainState(
        config=cfg,
        env=env,
        buffer=ReplayBuffer(capacity=cfg.buffer_capacity),
        model=model,
        model_opts=model_opts,
        dnet=dnet,
        dnet_opt=adam_init(dnet.net, learning_rate=cfg.distance_lr),
        policy=policy,
        actor_opt=adam_init(policy.net, learning_rate=cfg.actor_lr),
        critic=critic,
        critic_opt=adam_init(critic.net, learning_rate=cfg.critic_lr),
        rngs=rngs,
    )
    if cfg.method in GO_EXPLORE_METHODS:
        state.explorer = make_explorer(
            d, low, high, init, hidden=(cfg.policy_hidden,) * 2,
            action_noise_std=cfg.action_noise_std,
        )
        state.explorer_actor_opt = adam_init(state.explorer.net, learning_rate=cfg.actor_lr)
        state.explorer_critic_opt = adam_init(
            state.explorer.critic_net, learning_rate=cfg.critic_lr
        )
    return state


def _finish_episode(states, actions, goals, rewards, dones, provenance, trace=None) -> Episode:
    return Episode(
        states=np.array(states, dtype=np.float64),
        actions=np.array(actions, dtype=np.float64),
        goals=np.array(goals, dtype=np.float64),
        rewards=np.array(rewards, dtype=np.float64),
        dones=np.array(dones, dtype=bool),
        provenance=provenance,
        subgoal_trace=trace,
    )


def run_env_goal_episode(env: Env, policy: GoalPolicy, rngs) -> Episode:
    """One episode chasing a sampled environment goal (ends on success)."""
    goal = env.sample_env_goal(rngs["env"])
    es = env.reset(rngs["env"])
    states, actions, goals, rewards, dones = [es.state.copy()], [], [], [], []
    done = False
    while not done:
        a = act(policy, es.state, goal, mode="stochastic", rng=rngs["policy_noise"])
        es, r, done = env.step(es, a, goal, rngs["env"])
        states.append(es.state.copy())
        actions.append(a)
        goals.append(goal.copy())
        rewards.append(r)
        dones.append(done)
    return _finish_episode(states, actions, goals, rewards, dones, "env_goal")


def run_mun_episode(
    env: Env,
    policy: GoalPolicy,
    subgoal_set: SubgoalSet,
    n_s: int,
    t_s: int,
    rngs,
) -> Episode:
    """One directed episode: chase n_s randomly drawn subgoals in sequence.

    Each leg runs until its subgoal is reached or t_s steps elapse; timeouts
    are normal outcomes recorded in the subgoal trace.
    """
    es = env.reset(rngs["env"])
    states, actions, goals, rewards, dones = [es.state.copy()], [], [], [], []
    trace: list[SubgoalLeg] = []
    for _ in range(n_s):
        g = subgoal_set.goals[int(rngs["subgoal"].integers(len(subgoal_set)))].copy()
        steps, reached = 0, False
        while steps < t_s:
            a = act(policy, es.state, g, mode="stochastic", rng=rngs["policy_noise"])
            es, r, done = env.step(es, a, g, rngs["env"])
            states.append(es.state.copy())
            actions.append(a)
            goals.append(g.copy())
            rewards.append(r)
            dones.append(done)
            steps += 1
            if r == 1.0:
                reached = True
                break
        trace.append(SubgoalLeg(subgoal=g, reached=reached, steps_used=steps))
    return _finish_episode(states, actions, goals, rewards, dones, "dad_directed", trace)


def run_go_explore_episode(
    env: Env,
    policy: GoalPolicy,
    explorer: ExplorerPolicy,
    goal_fn,
    go_steps: int,
    explore_steps: int,
    rngs,
) -> Episode:
    """Go toward ``goal_fn(start)`` with the goal policy, then free-explore."""
    es = env.reset(rngs["env"])
    goal = goal_fn(es.state)
    states, actions, goals, rewards, dones = [es.state.copy()], [], [], [], []
    steps, reached = 0, False
    while steps < go_steps:
        a = act(policy, es.state, goal, mode="stochastic", rng=rngs["policy_noise"])
        es, r, done = env.step(es, a, goal, rngs["env"])
        states.append(es.state.copy())
        actions.append(a)
        goals.append(goal.copy())
        rewards.append(r)
        dones.append(done)
        steps += 1
        if r == 1.0:
            reached = True
            break
    trace = [SubgoalLeg(subgoal=goal.copy(), reached=reached, steps_used=steps)]
    for _ in range(explore_steps):
        if es.step_index >= env.spec.horizon:
            break
        a = explorer_act(explorer, es.state, mode="stochastic", rng=rngs["policy_noise"])
        es, r, done = env.step(es, a, goal, rngs["env"])
        states.append(es.state.copy())
        actions.append(a)
        goals.append(goal.copy())
        rewards.append(r)
        dones.append(done)
    return _finish_episode(states, actions, goals, rewards, dones, "dad_directed", trace)


def pick_mega_goal(ts: TrainState, start_state: np.ndarray) -> np.ndarray:
    """Lowest-density visited state, filtered by predicted reachability."""
    cfg, rng = ts.config, ts.rngs["subgoal"]
    samples = ts.buffer.sample_states(cfg.kde_samples, rng)
    bandwidth = cfg.kde_bandwidth_factor * np.maximum(samples.std(axis=0), 1e-6)
    kde = fit_kde(samples, bandwidth)
    candidates = ts.buffer.sample_states(cfg.n_candidates, rng)

    def reachable(c: np.ndarray) -> bool:
        return distance(ts.dnet, start_state, c) <= cfg.tau_reach

    goal, _ = kde_min_density_goal(kde, candidates, reachable)
    return goal


def pick_peg_goal(ts: TrainState, start_state: np.ndarray) -> np.ndarray:
    """Goal whose imagined pursuit leaves the explorer the most to gain."""
    cfg, rng = ts.config, ts.rngs["subgoal"]
    candidates = ts.buffer.sample_states(cfg.n_candidates, rng)
    policy = ts.policy

    def rollout_fn(goal: np.ndarray, k: int) -> np.ndarray:
        def policy_fn(states: np.ndarray) -> np.ndarray:
            x = np.concatenate([states, np.tile(goal, (states.shape[0], 1))], axis=1)
            u, _ = mlp_forward_batch(policy.net, x)
            u = u + policy.action_noise_std * rng.standard_normal(u.shape)
            a, _ = _squash(u, policy.action_low, policy.action_high)
            return a

        starts = np.tile(start_state, (k, 1))
        rollouts = imagine(ts.model, policy_fn, starts, cfg.imagination_horizon)
        return np.stack([ro.states[-1] for ro in rollouts])

    goal, _ = exploration_potential_goal(
        candidates, rollout_fn, lambda s: explorer_values(ts.explorer, s), k=cfg.peg_k
    )
    return goal


def _plan_subgoals(ts: TrainState) -> None:
    cfg = ts.config
    batch = ts.buffer.sample_episode_batch(
        min(cfg.plan_batch, ts.buffer.num_episodes("egc")), ts.rngs["subgoal"], source="egc"
    )
    if cfg.method == "mun_nodad":
        ts.subgoal_set = fixed_interval_subgoals(batch, cfg.n_subgoals,
                                                 created_at_step=ts.env_steps)
    else:
        ts.subgoal_set = dad(batch, cfg.n_subgoals, ts.rngs["subgoal"],
                             created_at_step=ts.env_steps)


def _collect_method_episode(ts: TrainState, iteration: int) -> None:
    cfg = ts.config
    if cfg.method in MUN_METHODS:
        ep = run_mun_episode(ts.env, ts.policy, ts.subgoal_set, cfg.n_s, cfg.t_s, ts.rngs)
        ts.legs_total += len(ep.subgoal_trace)
        ts.legs_reached += sum(leg.reached for leg in ep.subgoal_trace)
    elif cfg.method in GO_EXPLORE_METHODS:
        if (iteration - 1) % 2 == 0:
            picker = pick_mega_goal if cfg.method == "mega_g" else pick_peg_goal
            ep = run_go_explore_episode(
                ts.env, ts.policy, ts.explorer, lambda start: picker(ts, start),
                cfg.go_steps, cfg.explore_steps, ts.rngs,
            )
            ts.legs_total += 1
            ts.legs_reached += int(ep.subgoal_trace[0].reached)
        else:
            ep = run_env_goal_episode(ts.env, ts.policy, ts.rngs)
    else:  # gc_only's method episode is a second env-goal episode
        ep = run_env_goal_episode(ts.env, ts.policy, ts.rngs)
    ts.buffer.append(ep)
    ts.env_steps += len(ep)


def _run_updates(ts: TrainState) -> None:
    cfg = ts.config
    for _ in range(cfg.model_updates):
        train_model_step(ts.model, ts.model_opts, ts.buffer, cfg.model_batch,
                         ts.rngs["model_train"])
    sampler = ts.env.sample_env_goal
    for _ in range(cfg.agent_updates):
        _, rollouts = train_goal_agent_step(
            ts.policy, ts.critic, ts.model, ts.dnet, ts.buffer,
            ts.actor_opt, ts.critic_opt, ts.rngs["agent_train"],
            env_goal_sampler=sampler, subgoal_set=ts.subgoal_set,
            batch_size=cfg.agent_batch, horizon=cfg.imagination_horizon,
            gamma=cfg.gamma, lam=cfg.lam, action_reg=cfg.action_reg,
        )
        train_distance_step(ts.dnet, ts.dnet_opt, rollouts, cfg.distance_pairs,
                            ts.rngs["agent_train"])
    if cfg.method in GO_EXPLORE_METHODS:
        for _ in range(cfg.explorer_updates):
            train_explorer_step(
                ts.explorer, ts.model, ts.buffer,
                ts.explorer_actor_opt, ts.explorer_critic_opt, ts.rngs["agent_train"],
                batch_size=cfg.agent_batch, horizon=cfg.imagination_horizon,
                gamma=cfg.gamma, lam=cfg.lam, action_reg=cfg.action_reg,
            )


def _append_metrics_row(ts: TrainState) -> None:
    cfg = ts.config
    rng = ts.rngs["eval"]
    rate = evaluate_success(ts.policy, cfg.env_id, cfg.eval_episodes, rng)
    probe_n = min(cfg.probe_transitions, ts.buffer.num_transitions("union"))
    probe = ts.buffer.sample_transition_arrays(probe_n, rng)
    ose = one_step_error(ts.model, probe)
    last = ts.buffer.episodes("egc")[-1]
    h = min(cfg.compound_h, len(last))
    ce = compound_error(ts.model, last.states[: h + 1], last.actions[:h])
    cov = directional_coverage(ts.buffer, ts.env.coverage_cell_size, ts.env.coverage_dims)
    reach = ts.legs_reached / ts.legs_total if ts.legs_total else 0.0
    ts.metrics.append(
        MetricsRecord(ts.env_steps, rate, ose, ce, cov.bidirectional_fraction, reach)
    )
    ts.legs_reached = ts.legs_total = 0


def training_iteration(ts: TrainState) -> None:
    """One full collect/plan/update round; appends metrics when due."""
    cfg = ts.config
    i = ts.iteration + 1
    ep = run_env_goal_episode(ts.env, ts.policy, ts.rngs)
    ts.buffer.append(ep)
    ts.env_steps += len(ep)
    if cfg.method in MUN_METHODS and (i - 1) % cfg.plan_every == 0:
        _plan_subgoals(ts)
    _collect_method_episode(ts, i)
    _run_updates(ts)
    ts.iteration = i
    cap_hit = cfg.max_env_steps > 0 and ts.env_steps >= cfg.max_env_steps
    if i % cfg.eval_every == 0 or i == cfg.n_train or cap_hit:
        _append_metrics_row(ts)


def run_training(config: ExperimentConfig, out_dir=None, state: TrainState | None = None):
    """Run (or continue) training to completion; returns the final TrainState.

    With ``out_dir`` set, writes ``metrics.csv`` and ``checkpoint.ckpt``
    there; a run aborted by numerical divergence leaves ``abort.ckpt``
    behind instead and re-raises.
    """
    from .checkpoint import save_checkpoint  # local import to avoid a cycle

    ts = state if state is not None else build_train_state(config)
    cfg = ts.config
    try:
        while ts.iteration < cfg.n_train:
            if cfg.max_env_steps > 0 and ts.env_steps >= cfg.max_env_steps:
                break
            training_iteration(ts)
    except (TrainingDivergenceError, ModelDivergenceError):
        if out_dir is not None:
            save_checkpoint(f"{out_dir}/abort.ckpt", ts)
        raise
    if out_dir is not None:
        with open(f"{out_dir}/metrics.csv", "w", encoding="utf-8") as fh:
            fh.write(metrics_to_csv(ts.metrics))
        save_checkpoint(f"{out_dir}/checkpoint.ckpt", ts)
    return ts
