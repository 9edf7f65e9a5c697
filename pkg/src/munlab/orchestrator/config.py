"""Experiment configuration: a flat, typed key = value text format.

Every knob of every module lives in one dataclass.  Config files are plain
text with one ``key = value`` pair per line (``#`` comments and blank lines
ignored); values are parsed by the type of the field's default.  Unknown
keys, malformed values, and invariant violations all raise
:class:`~munlab.errors.ConfigurationError` naming the offending key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..envs import make_env
from ..errors import ConfigurationError

METHODS = ("mun", "mun_nodad", "mun_ns3", "gc_only", "mega_g", "peg_g")
MUN_METHODS = ("mun", "mun_nodad", "mun_ns3")
GO_EXPLORE_METHODS = ("mega_g", "peg_g")
ENV_IDS = ("point_maze", "line_walker", "block_world")


@dataclass
class ExperimentConfig:
    """All run parameters; field defaults double as the parsing schema."""

    env_id: str = "point_maze"
    method: str = "mun"
    seed: int = 0
    n_train: int = 100  # training iterations (one collection round each)
    max_env_steps: int = 0  # stop once this many env steps are spent (0 = off)
    # Subgoal planning.
    n_s: int = 2  # subgoal legs per directed episode
    t_s: int = 75  # step cap per subgoal leg
    n_subgoals: int = 20
    plan_every: int = 10  # iterations between subgoal re-planning
    plan_batch: int = 16  # env-goal episodes fed to the planner
    # Evaluation cadence.
    eval_every: int = 10
    eval_episodes: int = 10
    # Replay.
    buffer_capacity: int = 500
    # Dynamics model.
    model_members: int = 4
    model_hidden: int = 128  # width of the two member hidden layers
    model_batch: int = 64
    model_updates: int = 100
    model_lr: float = 1e-3
    # Goal agent (imagination).
    agent_updates: int = 100
    agent_batch: int = 64
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    imagination_horizon: int = 15
    gamma: float = 0.99
    lam: float = 0.95
    action_noise_std: float = 0.1
    action_reg: float = 3e-2  # L2 penalty on pre-squash action means
    policy_hidden: int = 64  # width of the two policy/critic hidden layers
    # Temporal distance net.
    distance_hidden: int = 64
    distance_lr: float = 1e-3
    distance_horizon_ref: int = 15
    distance_pairs: int = 8  # pairs per imagined rollout per distance step
    # Go-Explore baselines.
    go_steps: int = 75
    explore_steps: int = 75
    explorer_updates: int = 100
    kde_bandwidth_factor: float = 0.25
    kde_samples: int = 256
    tau_reach: float = 0.8
    n_candidates: int = 64
    peg_k: int = 4
    # Metrics probes.
    probe_transitions: int = 256
    compound_h: int = 10


_POSITIVE_INT = (
    "n_train", "n_s", "t_s", "n_subgoals", "plan_every", "plan_batch",
    "eval_every", "eval_episodes", "buffer_capacity", "model_members",
    "model_hidden", "model_batch", "model_updates", "agent_updates", "agent_batch",
    "imagination_horizon", "policy_hidden", "distance_hidden",
    "distance_horizon_ref", "distance_pairs", "go_steps", "explore_steps",
    "explorer_updates", "kde_samples", "n_candidates", "peg_k",
    "probe_transitions", "compound_h",
)
_POSITIVE_FLOAT = ("model_lr", "actor_lr", "critic_lr", "distance_lr",
                   "kde_bandwidth_factor", "tau_reach")


def parse_config(path: str) -> ExperimentConfig:
    """Read a ``key = value`` config file into an ExperimentConfig."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text)


def parse_config_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    types = {f.name: type(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigurationError(f"unknown config key '{key}'")
        try:
            setattr(cfg, key, types[key](value))
        except ValueError as exc:
            raise ConfigurationError(f"config key '{key}': bad value {value!r}") from exc
    return cfg


def write_config(cfg: ExperimentConfig) -> str:
    """Render a config as the same flat text the parser reads."""
    return "\n".join(
        f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)
    ) + "\n"


def resolve_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Apply method presets and validate every invariant.

    Returns a new config; the input is untouched.  The mun_ns3 ablation
    forces n_s = 3 with t_s = horizon // 3.
    """
    cfg = dataclasses.replace(cfg)
    if cfg.env_id not in ENV_IDS:
        raise ConfigurationError(f"config key 'env_id': unknown environment {cfg.env_id!r}")
    if cfg.method not in METHODS:
        raise ConfigurationError(f"config key 'method': unknown method {cfg.method!r}")
    horizon = make_env(cfg.env_id).spec.horizon
    if cfg.method == "mun_ns3":
        cfg.n_s = 3
        cfg.t_s = horizon // 3
    for name in _POSITIVE_INT:
        if getattr(cfg, name) < 1:
            raise ConfigurationError(f"config key '{name}': must be >= 1")
    for name in _POSITIVE_FLOAT:
        if not getattr(cfg, name) > 0.0:
            raise ConfigurationError(f"config key '{name}': must be > 0")
    if cfg.seed < 0:
        raise ConfigurationError("config key 'seed': must be >= 0")
    if cfg.max_env_steps < 0:
        raise ConfigurationError("config key 'max_env_steps': must be >= 0")
    if not 0.0 < cfg.gamma <= 1.0:
        raise ConfigurationError("config key 'gamma': must be in (0, 1]")
    if not 0.0 <= cfg.lam <= 1.0:
        raise ConfigurationError("config key 'lam': must be in [0, 1]")
    if cfg.action_noise_std < 0.0:
        raise ConfigurationError("config key 'action_noise_std': must be >= 0")
    if cfg.action_reg < 0.0:
        raise ConfigurationError("config key 'action_reg': must be >= 0")
    if cfg.n_subgoals < cfg.n_s:
        raise ConfigurationError("config key 'n_subgoals': must be >= n_s")
    if cfg.t_s * cfg.n_s > horizon:
        raise ConfigurationError(
            f"config key 't_s': t_s * n_s = {cfg.t_s * cfg.n_s} exceeds the "
            f"{cfg.env_id} horizon {horizon}"
        )
    if cfg.method in GO_EXPLORE_METHODS and cfg.go_steps + cfg.explore_steps > horizon:
        raise ConfigurationError(
            "config key 'explore_steps': go_steps + explore_steps exceeds the horizon"
        )
    if cfg.method in GO_EXPLORE_METHODS and cfg.model_members < 2:
        raise ConfigurationError(
            "config key 'model_members': explorer methods need >= 2 members"
        )
    return cfg
