"""Frozen-snapshot evaluation: success rate, navigation matrix, model errors.

Everything here treats policies and models as read-only.  Episodes are
independent, so aggregation is order-free; the serial implementations below
are the reference semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..agent import GoalPolicy, act
from ..dynamics import DynamicsEnsemble, compound_error, one_step_error
from ..envs import make_env
from ..errors import ConfigurationError, EmptySourceError
from ..replay import ReplayBuffer


def evaluate_success(
    policy: GoalPolicy, env_id: str, n_episodes: int, rng: np.random.Generator
) -> float:
    """Fraction of sampled environment goals the deterministic policy reaches."""
    if n_episodes < 1:
        raise ConfigurationError("n_episodes must be >= 1")
    env = make_env(env_id)
    wins = 0
    for _ in range(n_episodes):
        goal = env.sample_env_goal(rng)
        es = env.reset(rng)
        done = False
        while not done:
            a = act(policy, es.state, goal)
            es, r, done = env.step(es, a, goal, rng)
            if r == 1.0:
                wins += 1
                break
    return wins / n_episodes


@dataclass
class NavigationReport:
    """Success rates over ordered waypoint pairs (row = start, col = goal)."""

    waypoints: np.ndarray  # (n, d)
    matrix: np.ndarray  # (n, n)
    mean_off_diagonal: float


def navigation_matrix(
    policy: GoalPolicy,
    env_id: str,
    waypoints,
    reps: int,
    rng: np.random.Generator,
) -> NavigationReport:
    """Run the policy between every ordered pair of injected waypoints.

    A run starting at its own goal succeeds immediately, so the diagonal is
    exactly 1.0 for any policy.  Waypoints inside an illegal region raise a
    configuration error.
    """
    waypoints = np.atleast_2d(np.asarray(waypoints, dtype=np.float64))
    if waypoints.shape[0] < 2:
        raise ConfigurationError("navigation matrix needs at least 2 waypoints")
    env = make_env(env_id)
    if hasattr(env, "is_wall"):
        for w in waypoints:
            if env.is_wall(w[0], w[1]):
                raise ConfigurationError(f"waypoint {w.tolist()} is inside a wall")
    n = waypoints.shape[0]
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            wins = 0
            for _ in range(reps):
                es = env.inject_state(waypoints[i])
                goal = waypoints[j]
                if env.success(es.state, goal):
                    wins += 1
                    continue
                done = False
                while not done:
                    a = act(policy, es.state, goal)
                    es, r, done = env.step(es, a, goal, rng)
                    if r == 1.0:
                        wins += 1
                        break
            matrix[i, j] = wins / reps
    off = ~np.eye(n, dtype=bool)
    return NavigationReport(waypoints, matrix, float(matrix[off].mean()))


def build_probe(
    buffers: list[ReplayBuffer], n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Probe set pooled evenly from every method's buffer (shared yardstick)."""
    if not buffers:
        raise EmptySourceError("no buffers to pool a probe from")
    share = max(1, n // len(buffers))
    parts = [buf.sample_transition_arrays(share, rng) for buf in buffers]
    return tuple(np.concatenate(cols, axis=0) for cols in zip(*parts))


def reversed_probe(probe, negate=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Swap each (s, a, s') to (s', a~, s), the reversed-direction tuple.

    ``negate`` maps an action batch to its reverse-motion counterpart where
    the environment defines one (making the reversed tuple approximately
    dynamics-consistent); with ``negate=None`` the actions are kept as-is and
    reports carry a ``swapped_only`` flag.
    """
    s, a, s2 = probe
    return s2, a if negate is None else negate(a), s


@dataclass
class ModelErrorReport:
    """One-step / reversed / compounding errors per method, shared probes."""

    rows: dict[str, dict[str, float]]
    reversed_flag: str = "swapped_only"


def model_error_report(
    models: dict[str, DynamicsEnsemble], probe, trajectories, env_id: str | None = None
) -> ModelErrorReport:
    """Score every method's model on the same probe set and trajectories.

    ``probe`` is an (states, actions, next_states) triple; ``trajectories``
    is a list of (states, actions) real segments for the compounding error.
    When ``env_id`` names an environment with a defined action negation, the
    reversed-direction column negates actions (flag ``negated``); otherwise
    it swaps states only (flag ``swapped_only``).
    """
    s, a, s2 = probe
    if s.shape[0] == 0:
        raise EmptySourceError("empty probe set")
    negate = None
    if env_id is not None:
        env = make_env(env_id)
        if env.negate_action(np.zeros(env.spec.action_dim)) is not None:
            negate = env.negate_action
    rev = reversed_probe(probe, negate)
    rows: dict[str, dict[str, float]] = {}
    for name, model in models.items():
        comp = (
            float(np.mean([compound_error(model, st, ac) for st, ac in trajectories]))
            if trajectories
            else float("nan")
        )
        rows[name] = {
            "one_step_err": one_step_error(model, probe),
            "reversed_one_step_err": one_step_error(model, rev),
            "compound_err": comp,
        }
    return ModelErrorReport(rows, "swapped_only" if negate is None else "negated")


def report_to_csv(report: ModelErrorReport) -> str:
    lines = ["method,one_step_err,reversed_one_step_err,compound_err,reversed_probe"]
    for name, row in report.rows.items():
        lines.append(
            f"{name},{row['one_step_err']!r},{row['reversed_one_step_err']!r},"
            f"{row['compound_err']!r},{report.reversed_flag}"
        )
    return "\n".join(lines) + "\n"
