"""Binary checkpoints: magic header, JSON manifest, raw float64 arrays.

Layout: the 6-byte magic ``MUNLAB``, a little-endian uint32 format version,
a little-endian uint64 manifest length, the UTF-8 JSON manifest, then every
array's raw C-order float64 bytes back to back.  The manifest references
arrays by index, so floats round-trip bit-exactly and a loaded state
continues training byte-identically to an uninterrupted run.
"""

from __future__ import annotations

import json

import numpy as np

from ..agent import ExplorerPolicy, GoalCritic, GoalPolicy
from ..distance import DistanceNet
from ..dynamics import DynamicsEnsemble, RunningNorm
from ..envs import make_env
from ..errors import ConfigurationError
from ..numerics import AdamState, MlpParams
from ..replay import Episode, ReplayBuffer, SubgoalLeg
from ..subgoals import SubgoalSet
from .config import ExperimentConfig
from .training import MetricsRecord, TrainState, make_rngs

MAGIC = b"MUNLAB"
FORMAT_VERSION = 1


class _Packer:
    """Collects arrays during save; the manifest stores their indices."""

    def __init__(self) -> None:
        self.arrays: list[np.ndarray] = []

    def add(self, array: np.ndarray) -> int:
        self.arrays.append(np.ascontiguousarray(np.asarray(array, dtype=np.float64)))
        return len(self.arrays) - 1

    def add_list(self, arrays) -> list[int]:
        return [self.add(a) for a in arrays]


def _pack_mlp(p: _Packer, net: MlpParams) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "output_transform": net.output_transform,
        "weights": p.add_list(net.weights),
        "biases": p.add_list(net.biases),
    }


def _pack_adam(p: _Packer, opt: AdamState) -> dict:
    return {
        "m_weights": p.add_list(opt.m_weights),
        "v_weights": p.add_list(opt.v_weights),
        "m_biases": p.add_list(opt.m_biases),
        "v_biases": p.add_list(opt.v_biases),
        "step_count": opt.step_count,
        "learning_rate": opt.learning_rate,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "epsilon": opt.epsilon,
    }


def _pack_norm(p: _Packer, norm: RunningNorm) -> dict:
    return {"mean": p.add(norm.mean), "m2": p.add(norm.m2), "count": norm.count}


def _pack_episode(p: _Packer, ep: Episode) -> dict:
    trace = None
    if ep.subgoal_trace is not None:
        trace = [
            {"subgoal": p.add(leg.subgoal), "reached": bool(leg.reached),
             "steps_used": int(leg.steps_used)}
            for leg in ep.subgoal_trace
        ]
    return {
        "states": p.add(ep.states),
        "actions": p.add(ep.actions),
        "goals": p.add(ep.goals),
        "rewards": p.add(ep.rewards),
        "dones": p.add(ep.dones.astype(np.float64)),
        "provenance": ep.provenance,
        "trace": trace,
    }


def save_checkpoint(path: str, ts: TrainState) -> None:
    """Serialize a TrainState (parameters, buffer, rng streams, metrics)."""
    p = _Packer()
    cfg = ts.config
    meta = {
        "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "iteration": ts.iteration,
        "env_steps": ts.env_steps,
        "legs_reached": ts.legs_reached,
        "legs_total": ts.legs_total,
        "rng_states": {name: rng.bit_generator.state for name, rng in ts.rngs.items()},
        "metrics": [r.as_row() for r in ts.metrics],
        "model": {
            "members": [_pack_mlp(p, m) for m in ts.model.members],
            "opts": [_pack_adam(p, o) for o in ts.model_opts],
            "in_norm": _pack_norm(p, ts.model.in_norm),
            "delta_norm": _pack_norm(p, ts.model.delta_norm),
            "state_dim": ts.model.state_dim,
            "action_dim": ts.model.action_dim,
        },
        "dnet": {
            "net": _pack_mlp(p, ts.dnet.net),
            "horizon_ref": ts.dnet.horizon_ref,
            "opt": _pack_adam(p, ts.dnet_opt),
        },
        "policy": {
            "net": _pack_mlp(p, ts.policy.net),
            "low": p.add(ts.policy.action_low),
            "high": p.add(ts.policy.action_high),
            "noise": ts.policy.action_noise_std,
            "opt": _pack_adam(p, ts.actor_opt),
        },
        "critic": {"net": _pack_mlp(p, ts.critic.net), "opt": _pack_adam(p, ts.critic_opt)},
        "explorer": None,
        "subgoal_set": None,
        "buffer": {
            "capacity": ts.buffer.capacity,
            "dad": [_pack_episode(p, ep) for ep in ts.buffer.d_dad],
            "egc": [_pack_episode(p, ep) for ep in ts.buffer.d_egc],
        },
    }
    if ts.explorer is not None:
        meta["explorer"] = {
            "net": _pack_mlp(p, ts.explorer.net),
            "critic_net": _pack_mlp(p, ts.explorer.critic_net),
            "low": p.add(ts.explorer.action_low),
            "high": p.add(ts.explorer.action_high),
            "noise": ts.explorer.action_noise_std,
            "actor_opt": _pack_adam(p, ts.explorer_actor_opt),
            "critic_opt": _pack_adam(p, ts.explorer_critic_opt),
        }
    if ts.subgoal_set is not None:
        meta["subgoal_set"] = {
            "goals": p.add(ts.subgoal_set.goals),
            "source_strategy": ts.subgoal_set.source_strategy,
            "created_at_step": ts.subgoal_set.created_at_step,
        }
    meta["arrays"] = [list(a.shape) for a in p.arrays]
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint64(len(blob)).tobytes())
        fh.write(blob)
        for a in p.arrays:
            fh.write(a.tobytes())


class _Unpacker:
    def __init__(self, buf: bytes, shapes: list[list[int]]) -> None:
        self.arrays: list[np.ndarray] = []
        offset = 0
        for shape in shapes:
            count = int(np.prod(shape)) if shape else 1
            a = np.frombuffer(buf, dtype=np.float64, count=count, offset=offset)
            self.arrays.append(a.reshape(shape).copy())
            offset += count * 8

    def get(self, idx: int) -> np.ndarray:
        return self.arrays[idx]

    def get_list(self, ids) -> list[np.ndarray]:
        return [self.get(i) for i in ids]


def _unpack_mlp(u: _Unpacker, meta: dict) -> MlpParams:
    return MlpParams(
        layer_sizes=list(meta["layer_sizes"]),
        weights=u.get_list(meta["weights"]),
        biases=u.get_list(meta["biases"]),
        activation=meta["activation"],
        output_transform=meta["output_transform"],
    )


def _unpack_adam(u: _Unpacker, meta: dict) -> AdamState:
    return AdamState(
        m_weights=u.get_list(meta["m_weights"]),
        v_weights=u.get_list(meta["v_weights"]),
        m_biases=u.get_list(meta["m_biases"]),
        v_biases=u.get_list(meta["v_biases"]),
        step_count=int(meta["step_count"]),
        learning_rate=meta["learning_rate"],
        beta1=meta["beta1"],
        beta2=meta["beta2"],
        epsilon=meta["epsilon"],
    )


def _unpack_norm(u: _Unpacker, meta: dict) -> RunningNorm:
    return RunningNorm(mean=u.get(meta["mean"]), m2=u.get(meta["m2"]), count=meta["count"])


def _unpack_episode(u: _Unpacker, meta: dict) -> Episode:
    trace = None
    if meta["trace"] is not None:
        trace = [
            SubgoalLeg(subgoal=u.get(t["subgoal"]), reached=bool(t["reached"]),
                       steps_used=int(t["steps_used"]))
            for t in meta["trace"]
        ]
    return Episode(
        states=u.get(meta["states"]),
        actions=u.get(meta["actions"]),
        goals=u.get(meta["goals"]),
        rewards=u.get(meta["rewards"]),
        dones=u.get(meta["dones"]).astype(bool),
        provenance=meta["provenance"],
        subgoal_trace=trace,
    )


def load_checkpoint(path: str) -> TrainState:
    """Rebuild a TrainState; training can continue exactly where it stopped."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ConfigurationError(f"{path} is not a munlab checkpoint (bad magic)")
    version = int(np.frombuffer(raw, dtype=np.uint32, count=1, offset=len(MAGIC))[0])
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format version {version}")
    meta_len = int(np.frombuffer(raw, dtype=np.uint64, count=1, offset=len(MAGIC) + 4)[0])
    header = len(MAGIC) + 4 + 8
    meta = json.loads(raw[header : header + meta_len].decode("utf-8"))
    u = _Unpacker(raw[header + meta_len :], meta["arrays"])

    cfg = ExperimentConfig(**meta["config"])
    model_meta = meta["model"]
    model = DynamicsEnsemble(
        members=[_unpack_mlp(u, m) for m in model_meta["members"]],
        in_norm=_unpack_norm(u, model_meta["in_norm"]),
        delta_norm=_unpack_norm(u, model_meta["delta_norm"]),
        state_dim=int(model_meta["state_dim"]),
        action_dim=int(model_meta["action_dim"]),
    )
    policy_meta = meta["policy"]
    policy = GoalPolicy(
        net=_unpack_mlp(u, policy_meta["net"]),
        action_low=u.get(policy_meta["low"]),
        action_high=u.get(policy_meta["high"]),
        action_noise_std=policy_meta["noise"],
    )
    buffer = ReplayBuffer(capacity=int(meta["buffer"]["capacity"]))
    for ep_meta in meta["buffer"]["dad"]:
        buffer.append(_unpack_episode(u, ep_meta))
    for ep_meta in meta["buffer"]["egc"]:
        buffer.append(_unpack_episode(u, ep_meta))
    rngs = make_rngs(cfg.seed)
    for name, state in meta["rng_states"].items():
        rngs[name].bit_generator.state = state
    ts = TrainState(
        config=cfg,
        env=make_env(cfg.env_id),
        buffer=buffer,
        model=model,
        model_opts=[_unpack_adam(u, o) for o in model_meta["opts"]],
        dnet=DistanceNet(net=_unpack_mlp(u, meta["dnet"]["net"]),
                         horizon_ref=int(meta["dnet"]["horizon_ref"])),
        dnet_opt=_unpack_adam(u, meta["dnet"]["opt"]),
        policy=policy,
        actor_opt=_unpack_adam(u, policy_meta["opt"]),
        critic=GoalCritic(net=_unpack_mlp(u, meta["critic"]["net"])),
        critic_opt=_unpack_adam(u, meta["critic"]["opt"]),
        rngs=rngs,
        iteration=int(meta["iteration"]),
        env_steps=int(meta["env_steps"]),
        metrics=[MetricsRecord(int(r[0]), r[1], r[2], r[3], r[4], r[5])
                 for r in meta["metrics"]],
        legs_reached=int(meta["legs_reached"]),
        legs_total=int(meta["legs_total"]),
    )
    if meta["explorer"] is not None:
        ex = meta["explorer"]
        ts.explorer = ExplorerPolicy(
            net=_unpack_mlp(u, ex["net"]),
            critic_net=_unpack_mlp(u, ex["critic_net"]),
            action_low=u.get(ex["low"]),
            action_high=u.get(ex["high"]),
            action_noise_std=ex["noise"],
        )
        ts.explorer_actor_opt = _unpack_adam(u, ex["actor_opt"])
        ts.explorer_critic_opt = _unpack_adam(u, ex["critic_opt"])
    if meta["subgoal_set"] is not None:
        sg = meta["subgoal_set"]
        ts.subgoal_set = SubgoalSet(
            goals=u.get(sg["goals"]),
            source_strategy=sg["source_strategy"],
            created_at_step=int(sg["created_at_step"]),
        )
    return ts
