"""Experience data model and the priority/sampling math shared by every node role.

Everything here is a pure function or an immutable record; all of it is safe
to call from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_P_MIN = 1e-6
DEFAULT_EPSILON_BASE = 0.4


@dataclass(frozen=True, eq=False)
class Experience:
    """One state transition (s, a, r, s').

    State vectors are float32 and must share one length (the session's
    state dimension). ``action`` is a non-negative index into the action set.
    """

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "state", _as_state(self.state))
        object.__setattr__(self, "next_state", _as_state(self.next_state))
        object.__setattr__(self, "action", int(self.action))
        object.__setattr__(self, "reward", float(np.float32(self.reward)))
        if self.state.shape != self.next_state.shape:
            raise ValueError(
                f"state/next_state length mismatch: {self.state.shape} vs {self.next_state.shape}"
            )
        if self.action < 0:
            raise ValueError(f"negative action index: {self.action}")

    @property
    def state_dim(self) -> int:
        return self.state.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Experience):
            return NotImplemented
        return (
            self.action == other.action
            and self.reward == other.reward
            and np.array_equal(self.state, other.state)
            and np.array_equal(self.next_state, other.next_state)
        )


def _as_state(vec) -> np.ndarray:
    arr = np.ascontiguousarray(vec, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError(f"state vector must be 1-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class PrioritizedBatch:
    """A batch of experiences paired one-to-one with their priorities."""

    experiences: tuple[Experience, ...]
    priorities: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "experiences", tuple(self.experiences))
        object.__setattr__(self, "priorities", tuple(float(p) for p in self.priorities))
        if len(self.experiences) != len(self.priorities):
            raise ValueError(
                f"{len(self.experiences)} experiences vs {len(self.priorities)} priorities"
            )
        if not self.experiences:
            raise ValueError("empty batch")

    def __len__(self) -> int:
        return len(self.experiences)


@dataclass(frozen=True)
class ReplayConfig:
    """Replay memory knobs: ring capacity, priority exponent, floor, batch sizes."""

    capacity: int = 65536
    alpha: float = 0.6
    p_min: float = DEFAULT_P_MIN
    train_batch_size: int = 512
    actor_batch_size: int = 200

    def __post_init__(self):
        if self.train_batch_size < 1 or self.capacity < self.train_batch_size:
            raise ValueError("need capacity >= train_batch_size >= 1")
        if self.actor_batch_size < 1:
            raise ValueError("actor_batch_size must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.p_min > 0:
            raise ValueError("p_min must be > 0")


@dataclass(frozen=True)
class LearnerConfig:
    """Learner-side cadence knobs: reward discount and refresh periods."""

    gamma: float = 0.99
    n_update: int = 100
    n_pull: int = 200

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.n_update < 1 or self.n_pull < 1:
            raise ValueError("refresh periods must be >= 1")


def compute_priority(q_current: float, q_previous: float, p_min: float = DEFAULT_P_MIN) -> float:
    """Priority of an experience: |Q difference between successive steps|.

    Clamped below by ``p_min`` so a zero temporal-difference never produces a
    zero priority (the sampling distribution requires strictly positive mass).
    """
    if not p_min > 0:
        raise ValueError("p_min must be > 0")
    return max(abs(q_current - q_previous), p_min)


def sampling_probabilities(priorities, alpha: float) -> np.ndarray:
    """Sampling distribution over priorities: p_i^alpha / sum_k p_k^alpha.

    ``alpha = 0`` degenerates to the uniform distribution. Priorities are
    normalized by their maximum before exponentiation so large values cannot
    overflow; the result is unchanged (the distribution is scale-invariant).
    """
    p = np.asarray(priorities, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty priority sequence")
    if not np.all(p > 0):
        raise ValueError("priorities must be strictly positive")
    weights = (p / p.max()) ** alpha
    return weights / weights.sum()


def q_target(reward: float, gamma: float, max_next_q: float) -> float:
    """Bootstrap target: latest reward plus discounted best next-state value."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    return reward + gamma * max_next_q


def epsilon_greedy(q_values, epsilon: float, random_draw: float, random_index: int) -> int:
    """Pick ``random_index`` with probability epsilon, else the argmax of q_values.

    Ties break to the lowest index. Both random inputs are supplied by the
    caller so the function stays pure and exactly reproducible.
    """
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0:
        raise ValueError("empty q_values")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if not 0 <= random_index < q.size:
        raise ValueError(f"random_index {random_index} out of range for {q.size} actions")
    if random_draw < epsilon:
        return int(random_index)
    return int(np.argmax(q))


def actor_epsilon(index: int, count: int, base: float = DEFAULT_EPSILON_BASE) -> float:
    """Per-actor exploration rate: actor i of N uses base^(1 + i/(N-1)).

    The published experiments only say each actor gets its own epsilon; this
    schedule is a stand-in and can be overridden per actor via config.
    """
    if not 0 <= index < count:
        raise ValueError(f"actor index {index} out of range for {count} actors")
    if count == 1:
        return base
    return float(base ** (1.0 + index / (count - 1)))


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise ValueError("need n >= 1")
    return 1 << (n - 1).bit_length()


def is_finite_positive(x: float) -> bool:
    return math.isfinite(x) and x > 0
