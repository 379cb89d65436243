"""Capacity-bounded SumTree over a ring buffer of experience slots.

Leaves hold priority**alpha, internal nodes hold subtree sums, so inserting,
re-prioritizing, and proportional sampling are all O(log N) walks of a flat
array (node i's children live at 2i+1 and 2i+2). Capacity is rounded up to a
power of two; the padding leaves stay at 0 and are unreachable by sampling.

Single-owner structure: mutate and sample from one logical thread only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_P_MIN, Experience, next_power_of_two

# Full bottom-up resummation period, bounds accumulated float drift.
REBUILD_INTERVAL = 1 << 20


class SlotNotFoundError(KeyError):
    """Raised when a slot id does not refer to a live slot."""


@dataclass(frozen=True)
class SampleResult:
    """One sampled batch: slot ids, their experiences, and the sampling
    probability each slot had at draw time."""

    slot_ids: np.ndarray
    experiences: tuple[Experience, ...]
    probabilities: np.ndarray

    def __len__(self) -> int:
        return len(self.experiences)


class SumTree:
    def __init__(self, capacity_request: int, p_min: float = DEFAULT_P_MIN, alpha: float = 0.6):
        if capacity_request < 1:
            raise ValueError("capacity must be >= 1")
        if not p_min > 0:
            raise ValueError("p_min must be > 0")
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.capacity = next_power_of_two(capacity_request)
        self.p_min = float(p_min)
        self.alpha = float(alpha)
        self.nodes = np.zeros(2 * self.capacity - 1, dtype=np.float64)
        self.slots: list[Experience | None] = [None] * self.capacity
        # Monotone insert index of each slot's current occupant; lets callers
        # detect ring-wraparound overwrites between a sample and an update.
        self.slot_generation = np.full(self.capacity, -1, dtype=np.int64)
        self.write_cursor = 0
        self.live_count = 0
        self.insert_counter = 0
        # Internal-node steps taken by the most recent insert/update/sample;
        # equals depth for every operation.
        self.last_visit_count = 0
        self._mutations = 0

    @property
    def depth(self) -> int:
        return self.capacity.bit_length() - 1

    @property
    def total(self) -> float:
        """Sum of all leaf values; the sampling range is [0, total]."""
        return float(self.nodes[0])

    def leaf_values(self) -> np.ndarray:
        return self.nodes[self.capacity - 1 :].copy()

    def insert(self, experience: Experience, priority: float) -> int:
        """Store an experience at the ring cursor (overwriting the oldest when
        full), set its leaf to priority**alpha, and return the slot id."""
        slot = self.write_cursor
        self.slots[slot] = experience
        self.slot_generation[slot] = self.insert_counter
        self.insert_counter += 1
        self.write_cursor = (slot + 1) % self.capacity
        self.live_count = min(self.insert_counter, self.capacity)
        self._set_leaf(slot, priority)
        return slot

    def update_priority(self, slot_id: int, priority: float) -> None:
        """Re-prioritize a live slot; the experience payload is untouched."""
        if not 0 <= slot_id < self.live_count:
            raise SlotNotFoundError(f"slot {slot_id} is not live (live_count={self.live_count})")
        self._set_leaf(slot_id, priority)

    def generation(self, slot_id: int) -> int:
        """Monotone insert index of the slot's current occupant (-1 if never written)."""
        return int(self.slot_generation[slot_id])

    def sample_one(self, s: float) -> int:
        """Resolve one cumulative coordinate s in [0, total] to a slot id.

        Descends from the root: go left while the left child's sum covers s,
        otherwise go right with s reduced by the left sum. The >= boundary
        rule sends exact boundaries left and makes zero-width (empty) leaves
        unreachable.
        """
        if self.live_count == 0:
            raise ValueError("cannot sample from an empty tree")
        if not 0.0 <= s <= self.total:
            raise ValueError(f"s={s} outside [0, {self.total}]")
        nodes = self.nodes
        n = len(nodes)
        idx = 0
        visits = 0
        while 2 * idx + 1 < n:
            left = 2 * idx + 1
            visits += 1
            if nodes[left] >= s:
                idx = left
            else:
                s -= nodes[left]
                idx = left + 1
        self.last_visit_count = visits
        return idx - (self.capacity - 1)

    def sample_batch(self, k: int, rng: np.random.Generator, stratified: bool = False) -> SampleResult:
        """Draw k slots proportionally to their leaf values.

        Default is k independent uniforms over [0, total); duplicates are
        allowed. With ``stratified`` each draw comes from its own k-th of the
        range instead.
        """
        if k < 1:
            raise ValueError("batch size must be >= 1")
        if self.live_count == 0:
            raise ValueError("cannot sample from an empty tree")
        total = self.total
        if stratified:
            draws = (np.arange(k, dtype=np.float64) + rng.random(k)) * (total / k)
        else:
            draws = rng.uniform(0.0, total, size=k)
        ids = np.fromiter((self.sample_one(s) for s in draws), dtype=np.int64, count=k)
        probabilities = self.nodes[ids + (self.capacity - 1)] / total
        experiences = tuple(self.slots[i] for i in ids)
        return SampleResult(ids, experiences, probabilities)

    def _set_leaf(self, slot: int, priority: float) -> None:
        p = float(priority)
        if not (math.isfinite(p) and p > self.p_min):
            p = self.p_min
        value = p**self.alpha
        idx = slot + self.capacity - 1
        delta = value - self.nodes[idx]
        self.nodes[idx] = value
        visits = 0
        while idx:
            idx = (idx - 1) // 2
            self.nodes[idx] += delta
            visits += 1
        self.last_visit_count = visits
        self._mutations += 1
        if self._mutations % REBUILD_INTERVAL == 0:
            self.rebuild()

    def rebuild(self) -> None:
        """Recompute every internal sum bottom-up from the leaves (exact)."""
        nodes = self.nodes
        start, size = self.capacity - 1, self.capacity
        while size > 1:
            level = nodes[start : start + size]
            parent_start = (start - 1) // 2
            nodes[parent_start : parent_start + size // 2] = level[0::2] + level[1::2]
            start, size = parent_start, size // 2
