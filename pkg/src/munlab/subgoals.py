"""Subgoal selection strategies.

The centerpiece is ``dad`` (distinct-action discovery): find, via farthest
point sampling over pooled action vectors, the episode steps where the most
mutually different actions were taken, and reuse the states at those steps
as subgoals.  The intuition: places where the agent had to act differently
(turns, grasps, reversals) are the junctions worth practicing from both
sides.

Also here: fixed-interval subgoals (the ablation stand-in for dad), minimum
KDE-density goal picking, and exploration-potential goal scoring over
candidate goals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import eta
from .errors import ConfigurationError, EmptySourceError
from .replay import Episode


@dataclass
class SubgoalSet:
    """Chosen subgoals plus provenance bookkeeping."""

    goals: np.ndarray  # (n, d)
    source_strategy: str
    created_at_step: int = 0

    def __len__(self) -> int:
        return self.goals.shape[0]


def fps(
    points: np.ndarray,
    num_samples: int,
    rng: np.random.Generator,
    first_index: int | None = None,
) -> list[int]:
    """Farthest point sampling: greedy max-min L2 selection of point indices.

    The first pick is uniform-random (or forced via ``first_index``); each
    later pick maximizes the distance to the nearest already-selected point,
    breaking ties toward the lowest index.  Returns min(num_samples, n)
    distinct indices.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = pts.shape[0]
    if n == 0:
        raise EmptySourceError("fps needs at least one point")
    if num_samples < 1:
        raise ConfigurationError("num_samples must be positive")
    first = int(rng.integers(n)) if first_index is None else int(first_index)
    if not 0 <= first < n:
        raise ConfigurationError(f"first_index {first} out of range")
    selected = [first]
    min_d = np.linalg.norm(pts - pts[first], axis=1)
    min_d[first] = -1.0  # never re-select
    while len(selected) < min(num_samples, n):
        nxt = int(np.argmax(min_d))
        selected.append(nxt)
        min_d = np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1))
        min_d[nxt] = -1.0
    return selected


def _pool_steps(episodes: list[Episode]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate (pre-action states, actions) over an episode batch."""
    states = [ep.states[:-1] for ep in episodes if len(ep) > 0]
    actions = [ep.actions for ep in episodes if len(ep) > 0]
    if not actions:
        raise EmptySourceError("episode batch holds no transitions")
    return np.concatenate(states), np.concatenate(actions)


def dad(
    episodes: list[Episode],
    n_subgoals: int,
    rng: np.random.Generator,
    first_index: int | None = None,
    created_at_step: int = 0,
) -> SubgoalSet:
    """Distinct-action discovery over an episode batch.

    Runs farthest point sampling on the pooled action vectors and returns
    the goal projections of the states at which those actions were taken.
    """
    states, actions = _pool_steps(episodes)
    idx = fps(actions, n_subgoals, rng, first_index)
    return SubgoalSet(
        goals=eta(states[idx]).copy(),
        source_strategy="dad",
        created_at_step=created_at_step,
    )


def fixed_interval_subgoals(
    episodes: list[Episode], n_subgoals: int, created_at_step: int = 0
) -> SubgoalSet:
    """Evenly spaced states from the pooled episode steps (the no-dad baseline).

    With T pooled steps and n picks, indices are floor(i * (T-1) / (n-1)).
    """
    states, _ = _pool_steps(episodes)
    total = states.shape[0]
    n = min(n_subgoals, total)
    if n < 1:
        raise ConfigurationError("n_subgoals must be positive")
    if n == 1:
        idx = [0]
    else:
        idx = [int(np.floor(i * (total - 1) / (n - 1))) for i in range(n)]
    return SubgoalSet(
        goals=eta(states[idx]).copy(),
        source_strategy="fixed_interval",
        created_at_step=created_at_step,
    )


@dataclass
class KdeModel:
    """Gaussian kernel density estimate with per-dimension bandwidth."""

    samples: np.ndarray  # (m, d)
    bandwidth: np.ndarray  # (d,)


def fit_kde(samples: np.ndarray, bandwidth) -> KdeModel:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        raise EmptySourceError("kde needs at least one sample")
    bw = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (samples.shape[1],)).copy()
    if np.any(bw <= 0):
        raise ConfigurationError("kde bandwidth must be positive")
    return KdeModel(samples=samples, bandwidth=bw)


def kde_density(kde: KdeModel, points: np.ndarray) -> np.ndarray:
    """Density of each point row under the Gaussian product-kernel KDE."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = kde.samples.shape[1]
    z = (points[:, None, :] - kde.samples[None, :, :]) / kde.bandwidth
    log_norm = d * 0.5 * np.log(2.0 * np.pi) + np.sum(np.log(kde.bandwidth))
    return np.exp(-0.5 * np.sum(z * z, axis=2)).mean(axis=1) * np.exp(-log_norm)


def kde_min_density_goal(
    kde: KdeModel, candidates: np.ndarray, reachable=None
) -> tuple[np.ndarray, int]:
    """Lowest-density candidate goal, optionally filtered for reachability.

    ``reachable`` is a predicate over candidate vectors; when it rejects
    every candidate the filter is ignored (rarely-visited goals beat no goal
    at all).  Ties break toward the lowest index.  Returns (goal, index).
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if candidates.shape[0] == 0:
        raise EmptySourceError("no candidate goals")
    keep = np.arange(candidates.shape[0])
    if reachable is not None:
        mask = np.array([bool(reachable(c)) for c in candidates])
        if mask.any():
            keep = keep[mask]
    dens = kde_density(kde, candidates[keep])
    pick = int(keep[int(np.argmin(dens))])
    return candidates[pick].copy(), pick


def exploration_potential_goal(
    candidates: np.ndarray,
    rollout_fn,
    value_fn,
    k: int = 4,
) -> tuple[np.ndarray, int]:
    """Candidate goal whose imagined pursuit ends in the most explorable states.

    ``rollout_fn(goal, k)`` returns the k final states of imagined rollouts
    chasing that goal; ``value_fn(states)`` scores them with the explorer
    critic.  The winner maximizes the mean score, ties toward the lowest
    index.  Returns (goal, index).
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if candidates.shape[0] == 0:
        raise EmptySourceError("no candidate goals")
    scores = np.empty(candidates.shape[0])
    for i, g in enumerate(candidates):
        finals = rollout_fn(g, k)
        scores[i] = float(np.mean(value_fn(finals)))
    pick = int(np.argmax(scores))
    return candidates[pick].copy(), pick
