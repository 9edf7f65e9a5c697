"""Episode replay storage split by provenance, plus directional coverage.

Episodes carry their full state chain as one array (states[i] is the state
before transition i, states[i+1] the one after), so the chain invariant is
structural.  The buffer keeps two FIFO sub-buffers: ``d_dad`` for directed
(subgoal- or exploration-driven) episodes and ``d_egc`` for episodes that
chased an environment goal.  Transition sampling is uniform with replacement
over the union of both.

``directional_coverage`` discretizes visited states into cells and reports
how much of the visited cell-pair graph has been traversed in both
directions -- the quantity the subgoal strategies are trying to push up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptySourceError

PROVENANCES = ("dad_directed", "env_goal")


@dataclass
class Transition:
    """One environment step."""

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    goal: np.ndarray
    reward: float
    done: bool


@dataclass
class SubgoalLeg:
    """Bookkeeping for one commanded subgoal inside a directed episode."""

    subgoal: np.ndarray
    reached: bool
    steps_used: int


@dataclass
class Episode:
    """A recorded episode of T transitions (T may be 0).

    ``states`` has T+1 rows; ``actions``, ``goals``, ``rewards`` and
    ``dones`` have T rows.  ``goals`` is per-transition because directed
    episodes switch goals between legs.  ``subgoal_trace`` is present exactly
    for dad_directed episodes.
    """

    states: np.ndarray
    actions: np.ndarray
    goals: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    provenance: str
    subgoal_trace: list[SubgoalLeg] | None = None

    def __len__(self) -> int:
        return self.actions.shape[0]

    def validate(self) -> None:
        t = len(self)
        if self.states.ndim != 2 or self.states.shape[0] != t + 1:
            raise DimensionError(f"states shape {self.states.shape} does not chain {t} transitions")
        for name in ("goals",):
            arr = getattr(self, name)
            if arr.shape[0] != t or arr.shape[1] != self.states.shape[1]:
                raise DimensionError(f"{name} shape {arr.shape} inconsistent with states")
        if self.actions.shape[0] != t or self.rewards.shape != (t,) or self.dones.shape != (t,):
            raise DimensionError("actions/rewards/dones lengths inconsistent")
        if self.provenance not in PROVENANCES:
            raise DimensionError(f"unknown provenance {self.provenance!r}")
        if (self.subgoal_trace is not None) != (self.provenance == "dad_directed"):
            raise DimensionError("subgoal_trace must be present exactly for dad_directed episodes")

    def transition(self, i: int) -> Transition:
        return Transition(
            state=self.states[i],
            action=self.actions[i],
            next_state=self.states[i + 1],
            goal=self.goals[i],
            reward=float(self.rewards[i]),
            done=bool(self.dones[i]),
        )


@dataclass
class ReplayBuffer:
    """Two FIFO episode lists with uniform transition sampling over their union."""

    capacity: int = 500
    d_dad: list[Episode] = field(default_factory=list)
    d_egc: list[Episode] = field(default_factory=list)

    def append(self, episode: Episode) -> None:
        episode.validate()
        target = self.d_dad if episode.provenance == "dad_directed" else self.d_egc
        target.append(episode)
        if len(target) > self.capacity:
            del target[0]

    def episodes(self, source: str = "union") -> list[Episode]:
        if source == "dad":
            return list(self.d_dad)
        if source == "egc":
            return list(self.d_egc)
        if source == "union":
            return list(self.d_dad) + list(self.d_egc)
        raise DimensionError(f"unknown source {source!r}")

    def num_episodes(self, source: str = "union") -> int:
        return len(self.episodes(source))

    def num_transitions(self, source: str = "union") -> int:
        return sum(len(e) for e in self.episodes(source))

    def _locate(self, n: int, rng: np.random.Generator, source: str) -> tuple[list[Episode], np.ndarray, np.ndarray]:
        eps = self.episodes(source)
        lens = np.array([len(e) for e in eps], dtype=np.int64)
        total = int(lens.sum())
        if total == 0:
            raise EmptySourceError(f"no transitions to sample from ({source})")
        flat = rng.integers(0, total, size=n)
        cuts = np.cumsum(lens)
        ep_idx = np.searchsorted(cuts, flat, side="right")
        step_idx = flat - (cuts[ep_idx] - lens[ep_idx])
        return eps, ep_idx, step_idx

    def sample_transitions(self, n: int, rng: np.random.Generator, source: str = "union") -> list[Transition]:
        """n transitions uniform with replacement over the source's union."""
        if n == 0:
            return []
        eps, ep_idx, step_idx = self._locate(n, rng, source)
        return [eps[e].transition(int(i)) for e, i in zip(ep_idx, step_idx)]

    def sample_transition_arrays(
        self, n: int, rng: np.random.Generator, source: str = "union"
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batch form of sample_transitions: (states, actions, next_states)."""
        eps, ep_idx, step_idx = self._locate(n, rng, source)
        s = np.empty((n, eps[0].states.shape[1]))
        a = np.empty((n, eps[0].actions.shape[1]))
        s2 = np.empty_like(s)
        for row, (e, i) in enumerate(zip(ep_idx, step_idx)):
            s[row] = eps[e].states[i]
            a[row] = eps[e].actions[i]
            s2[row] = eps[e].states[i + 1]
        return s, a, s2

    def sample_states(self, n: int, rng: np.random.Generator, source: str = "union") -> np.ndarray:
        eps, ep_idx, step_idx = self._locate(n, rng, source)
        return np.stack([eps[e].states[i] for e, i in zip(ep_idx, step_idx)])

    def sample_episode_batch(
        self, batch_size: int, rng: np.random.Generator, source: str = "egc"
    ) -> list[Episode]:
        """Uniform episode sample without replacement (with, if too few episodes)."""
        eps = self.episodes(source)
        if not eps:
            raise EmptySourceError(f"no episodes to sample from ({source})")
        if batch_size >= len(eps):
            if batch_size == len(eps):
                idx = rng.permutation(len(eps))
            else:
                idx = rng.integers(0, len(eps), size=batch_size)
        else:
            idx = rng.choice(len(eps), size=batch_size, replace=False)
        return [eps[int(i)] for i in idx]


@dataclass
class CoverageReport:
    """Directional coverage of the discretized transition graph.

    A transition contributes the ordered cell pair (cell(s), cell(s')) when
    the two differ.  Pairs are 'forward' when the first cell precedes the
    second lexicographically, 'backward' otherwise; the fraction is over
    unordered pairs seen in at least one direction.
    """

    forward_pairs: int
    backward_pairs: int
    bidirectional_pairs: int
    unique_pairs: int
    bidirectional_fraction: float


def directional_coverage(
    buffer: ReplayBuffer, cell_size: float, dims: list[int] | None = None
) -> CoverageReport:
    """Discretize all buffered transitions and measure two-way traversal."""
    seen: set[bytes] = set()
    ordered: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
    for ep in buffer.episodes("union"):
        if len(ep) == 0:
            continue
        proj = ep.states if dims is None else ep.states[:, dims]
        cells = np.floor(proj / cell_size).astype(np.int64)
        c1, c2 = cells[:-1], cells[1:]
        moved = np.any(c1 != c2, axis=1)
        for a, b in zip(c1[moved], c2[moved]):
            key = a.tobytes() + b"|" + b.tobytes()
            if key not in seen:
                seen.add(key)
                ordered.append((tuple(a), tuple(b)))
    forward = backward = bidir = 0
    directed = {pair for pair in ordered}
    unordered: set[tuple[tuple[int, ...], tuple[int, ...]]] = set()
    for a, b in ordered:
        if a < b:
            forward += 1
            unordered.add((a, b))
        else:
            backward += 1
            unordered.add((b, a))
    for a, b in unordered:
        if (a, b) in directed and (b, a) in directed:
            bidir += 1
    unique = len(unordered)
    fraction = bidir / unique if unique else 0.0
    return CoverageReport(forward, backward, bidir, unique, fraction)
