"""Three toy goal-reaching environments with a shared interface.

All environments use float64 state vectors, share the goal space with the
state space (the goal projection ``eta`` is the identity), have horizon 150,
and add uniform noise of ±1% of the action range to each action.  Envs hold
no mutable state: ``reset``/``step`` are pure functions over ``EnvState``
plus an explicit random generator, which keeps training loops replayable.

    point_maze   2-D point agent in a 6x8-cell U-maze with a far room
    line_walker  1-D position/velocity agent reaching distant positions
    block_world  gripper with two blocks to pick, place, and stack
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolationError, DimensionError

ENV_IDS = ("point_maze", "line_walker", "block_world")


def eta(state: np.ndarray) -> np.ndarray:
    """Goal projection: identity (goals live in the full state space)."""
    return np.asarray(state, dtype=np.float64)


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment."""

    env_id: str
    state_dim: int
    action_dim: int
    horizon: int
    action_low: np.ndarray
    action_high: np.ndarray
    success_threshold: float


@dataclass
class EnvState:
    """A point in an episode: the state vector and how many steps were taken."""

    state: np.ndarray
    step_index: int = 0


class Env:
    """Common environment interface; subclasses implement the dynamics."""

    spec: EnvSpec
    # Dimensions used by the directional-coverage metric (None = all), and
    # the discretization cell size for that metric.
    coverage_dims: list[int] | None = None
    coverage_cell_size: float = 0.5

    def reset(self, rng: np.random.Generator) -> EnvState:
        raise NotImplementedError

    def sample_env_goal(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def success(self, state: np.ndarray, goal: np.ndarray) -> bool:
        """Default success predicate: full-state L2 within the threshold."""
        return bool(np.linalg.norm(state - goal) <= self.spec.success_threshold)

    def negate_action(self, actions: np.ndarray) -> np.ndarray | None:
        """Reverse-motion counterpart of ``actions``, or None if undefined.

        Defined only where the action space acts symmetrically on the state
        (so the reversed transition is approximately realizable); accepts a
        single action or a batch.
        """
        return None

    def step(
        self,
        env_state: EnvState,
        action: np.ndarray,
        goal: np.ndarray,
        rng: np.random.Generator,
    ) -> tuple[EnvState, float, bool]:
        """Advance one step; returns (next state, reward, done).

        Reward is 1 exactly when the next state satisfies the success
        predicate for ``goal``; done when that happens or the horizon is
        reached.  Stepping past the horizon is a contract violation.
        """
        if env_state.step_index >= self.spec.horizon:
            raise ContractViolationError("step() called on a finished episode")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.spec.action_dim,):
            raise DimensionError(f"action has shape {action.shape}")
        a = np.clip(action, self.spec.action_low, self.spec.action_high)
        noise = rng.uniform(-1.0, 1.0, size=self.spec.action_dim)
        a_eff = a + 0.01 * (self.spec.action_high - self.spec.action_low) * noise
        nxt = self._transition(env_state.state, a_eff)
        reached = self.success(nxt, goal)
        reward = 1.0 if reached else 0.0
        step_index = env_state.step_index + 1
        done = reached or step_index >= self.spec.horizon
        return EnvState(nxt, step_index), reward, done

    def inject_state(self, state: np.ndarray) -> EnvState:
        """Start an episode at an arbitrary state (evaluation-only hook)."""
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.spec.state_dim,):
            raise DimensionError(f"state has shape {state.shape}")
        return EnvState(state.copy(), 0)


class PointMaze(Env):
    """Point agent in a 6x8-cell U-maze whose far room is top-left.

    Cells are unit squares on a grid 8 wide (x) by 6 tall (y); a cell set
    blocks the middle so that the far room (x in [0,3], y in [3,5]) is only
    reachable by the long way round: along the bottom corridor, up the right
    side, and back along the top.  Movement is clipped at wall faces, one
    axis at a time (no pass-through, no sliding into corners).
    """

    WIDTH = 8
    HEIGHT = 6
    # (col, row) wall cells, row 0 at the bottom.
    WALLS = frozenset(
        [(c, r) for r in (1, 2) for c in range(0, 6)]
        + [(c, r) for r in (3, 4) for c in (3, 4, 5)]
    )
    # Hand-placed goal cells deep in the far room.
    FAR_ROOM_GOALS = np.array(
        [[0.5, 3.5], [2.5, 3.5], [0.5, 4.5], [2.5, 4.5]]
    )
    _EPS = 1e-9

    def __init__(self) -> None:
        self.spec = EnvSpec(
            env_id="point_maze",
            state_dim=2,
            action_dim=2,
            horizon=150,
            action_low=np.full(2, -0.3),
            action_high=np.full(2, 0.3),
            success_threshold=0.15,
        )
        self.coverage_dims = None
        self.coverage_cell_size = 0.5

    def is_wall(self, x: float, y: float) -> bool:
        if not (0.0 <= x < self.WIDTH and 0.0 <= y < self.HEIGHT):
            return True
        return (int(x), int(y)) in self.WALLS

    def negate_action(self, actions: np.ndarray) -> np.ndarray:
        return -np.asarray(actions, dtype=np.float64)

    def reset(self, rng: np.random.Generator) -> EnvState:
        start = np.array([0.5, 0.5]) + rng.uniform(-0.05, 0.05, size=2)
        return EnvState(start, 0)

    def sample_env_goal(self, rng: np.random.Generator) -> np.ndarray:
        return self.FAR_ROOM_GOALS[rng.integers(len(self.FAR_ROOM_GOALS))].copy()

    def _transition(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        x, y = state
        dx, dy = action
        # Per-axis move with clipping at the face of any wall cell entered.
        nx = x + dx
        if self.is_wall(nx, y):
            nx = np.floor(x) + 1.0 - self._EPS if dx > 0 else np.floor(x) + self._EPS
        ny = y + dy
        if self.is_wall(nx, ny):
            ny = np.floor(y) + 1.0 - self._EPS if dy > 0 else np.floor(y) + self._EPS
        return np.array([nx, ny])


class LineWalker(Env):
    """Position/velocity agent on a line; goals sit at x in {±3, ±4, ±5}.

    v' = clip(v + 0.25 a, ±1), x' = clip(x + 0.25 v', ±6).  Goal vectors have
    zero velocity, so reaching one means arriving and slowing down.
    """

    POS_LIMIT = 6.0
    VEL_LIMIT = 1.0
    ACCEL = 0.25
    SPEED = 0.25
    GOAL_POSITIONS = np.array([-5.0, -4.0, -3.0, 3.0, 4.0, 5.0])

    def __init__(self) -> None:
        self.spec = EnvSpec(
            env_id="line_walker",
            state_dim=2,
            action_dim=1,
            horizon=150,
            action_low=np.full(1, -1.0),
            action_high=np.full(1, 1.0),
            success_threshold=0.5,
        )
        self.coverage_dims = [0]
        self.coverage_cell_size = 0.5

    def reset(self, rng: np.random.Generator) -> EnvState:
        return EnvState(np.zeros(2), 0)

    def sample_env_goal(self, rng: np.random.Generator) -> np.ndarray:
        pos = self.GOAL_POSITIONS[rng.integers(len(self.GOAL_POSITIONS))]
        return np.array([pos, 0.0])

    def negate_action(self, actions: np.ndarray) -> np.ndarray:
        return -np.asarray(actions, dtype=np.float64)

    def _transition(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        v = np.clip(state[1] + self.ACCEL * action[0], -self.VEL_LIMIT, self.VEL_LIMIT)
        x = np.clip(state[0] + self.SPEED * v, -self.POS_LIMIT, self.POS_LIMIT)
        return np.array([x, v])


class BlockWorld(Env):
    """Gripper over a table with two blocks; env goals are block stacks.

    State (10-D): gripper xyz, grip flag, block-1 xyz, block-2 xyz.  Action
    (4-D in ±1): gripper displacement (scaled by 0.05) and a grip channel
    whose sign sets the flag.  A block within the grasp radius of a closed
    gripper tracks the gripper's displacement; opening the grip drops the
    held block onto the table or onto the other block when aligned.  An
    ungrasped block never moves.  Success ignores the gripper dimensions and
    requires every block within the threshold of its goal position.
    """

    MOVE_SCALE = 0.05
    GRASP_RADIUS = 0.05
    BLOCK_HEIGHT = 0.06
    REST_Z = 0.03
    Z_MAX = 0.4
    STACK_BASES = np.array([[0.4, 0.4], [0.5, 0.5], [0.6, 0.6]])
    N_BLOCKS = 2

    def __init__(self) -> None:
        self.spec = EnvSpec(
            env_id="block_world",
            state_dim=4 + 3 * self.N_BLOCKS,
            action_dim=4,
            horizon=150,
            action_low=np.full(4, -1.0),
            action_high=np.full(4, 1.0),
            success_threshold=0.03,
        )
        self.coverage_dims = list(range(4, 4 + 3 * self.N_BLOCKS))
        self.coverage_cell_size = 0.25

    def _block(self, state: np.ndarray, k: int) -> np.ndarray:
        return state[4 + 3 * k : 7 + 3 * k]

    def reset(self, rng: np.random.Generator) -> EnvState:
        state = np.zeros(self.spec.state_dim)
        state[0:3] = [0.5, 0.5, 0.2]
        state[3] = 0.0
        slots = np.array([[0.3, 0.35], [0.7, 0.6]])
        for k in range(self.N_BLOCKS):
            xy = slots[k] + rng.uniform(-0.02, 0.02, size=2)
            state[4 + 3 * k : 6 + 3 * k] = xy
            state[6 + 3 * k] = self.REST_Z
        return EnvState(state, 0)

    def sample_env_goal(self, rng: np.random.Generator) -> np.ndarray:
        base = self.STACK_BASES[rng.integers(len(self.STACK_BASES))]
        top = int(rng.integers(self.N_BLOCKS))
        goal = np.zeros(self.spec.state_dim)
        goal[0:3] = [base[0], base[1], 0.2]
        goal[3] = 0.0
        for k in range(self.N_BLOCKS):
            z = self.REST_Z + (self.BLOCK_HEIGHT if k == top else 0.0)
            goal[4 + 3 * k : 7 + 3 * k] = [base[0], base[1], z]
        return goal

    def success(self, state: np.ndarray, goal: np.ndarray) -> bool:
        for k in range(self.N_BLOCKS):
            if np.linalg.norm(self._block(state, k) - self._block(goal, k)) > self.spec.success_threshold:
                return False
        return True

    def _held_block(self, state: np.ndarray) -> int | None:
        if state[3] < 0.5:
            return None
        gripper = state[0:3]
        best, best_d = None, self.GRASP_RADIUS
        for k in range(self.N_BLOCKS):
            d = float(np.linalg.norm(self._block(state, k) - gripper))
            if d <= best_d:
                best, best_d = k, d
        return best

    def _transition(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        nxt = state.copy()
        old_gripper = state[0:3]
        new_gripper = np.clip(
            old_gripper + self.MOVE_SCALE * action[0:3],
            [0.0, 0.0, 0.0],
            [1.0, 1.0, self.Z_MAX],
        )
        nxt[0:3] = new_gripper
        grip_new = 1.0 if action[3] > 0.0 else 0.0
        held = self._held_block(state)
        if held is not None:
            if grip_new > 0.5:
                nxt[4 + 3 * held : 7 + 3 * held] += new_gripper - old_gripper
            else:
                self._drop(nxt, held)
        nxt[3] = grip_new
        return nxt

    def _drop(self, state: np.ndarray, k: int) -> None:
        blk = self._block(state, k)
        rest = self.REST_Z
        for other in range(self.N_BLOCKS):
            if other == k:
                continue
            ob = self._block(state, other)
            aligned = np.linalg.norm(blk[0:2] - ob[0:2]) <= 0.75 * self.BLOCK_HEIGHT
            if aligned and ob[2] < blk[2]:
                rest = max(rest, ob[2] + self.BLOCK_HEIGHT)
        blk[2] = rest


def make_env(env_id: str) -> Env:
    """Construct an environment by id; unknown ids raise ConfigurationError."""
    if env_id == "point_maze":
        return PointMaze()
    if env_id == "line_walker":
        return LineWalker()
    if env_id == "block_world":
        return BlockWorld()
    raise ConfigurationError(f"unknown env_id {env_id!r}")
