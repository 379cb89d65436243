"""Deterministic grid navigation task used to validate the pipeline end to
end at desk scale: one-hot float32 states, four actions, small negative step
penalty, +1 on reaching the goal, bounded episodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_COUNT = 4
_MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}


@dataclass
class GridWorld:
    width: int = 5
    height: int = 5
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] | None = None  # defaults to the far corner
    step_penalty: float = -0.01
    goal_reward: float = 1.0
    episode_cap: int = 200

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("grid must be at least 2x2")
        if self.goal is None:
            self.goal = (self.width - 1, self.height - 1)
        if self.goal == self.start:
            raise ValueError("goal must differ from start")
        self._pos = self.start
        self._steps = 0

    @property
    def state_dim(self) -> int:
        return self.width * self.height

    @property
    def optimal_steps(self) -> int:
        # No obstacles, so the shortest path length is the Manhattan distance.
        return abs(self.goal[0] - self.start[0]) + abs(self.goal[1] - self.start[1])

    def cell_index(self, pos: tuple[int, int]) -> int:
        return pos[1] * self.width + pos[0]

    def one_hot(self, pos: tuple[int, int]) -> np.ndarray:
        vec = np.zeros(self.state_dim, dtype=np.float32)
        vec[self.cell_index(pos)] = 1.0
        return vec

    def reset(self) -> tuple[int, int]:
        self._pos = self.start
        self._steps = 0
        return self._pos

    @property
    def position(self) -> tuple[int, int]:
        return self._pos

    def step(self, action: int) -> tuple[tuple[int, int], float, bool]:
        """Apply one action; moving off-grid stays in place. Returns
        (next position, reward, episode done)."""
        dx, dy = _MOVES[action]
        x = min(max(self._pos[0] + dx, 0), self.width - 1)
        y = min(max(self._pos[1] + dy, 0), self.height - 1)
        self._pos = (x, y)
        self._steps += 1
        if self._pos == self.goal:
            return self._pos, self.goal_reward, True
        return self._pos, self.step_penalty, self._steps >= self.episode_cap


def greedy_rollout(env: GridWorld, q_table: np.ndarray) -> int | None:
    """Follow argmax actions from the start; returns the step count on
    reaching the goal within the episode cap, else None."""
    pos = env.reset()
    for steps in range(1, env.episode_cap + 1):
        action = int(np.argmax(q_table[env.cell_index(pos)]))
        pos, _, done = env.step(action)
        if pos == env.goal:
            return steps
        if done:
            return None
    return None


def parse_grid(spec_text: str) -> tuple[int, int]:
    """Parse a WxH string such as '5x5'."""
    try:
        w, h = spec_text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ValueError(f"bad grid {spec_text!r}, expected WxH like 5x5") from None
