"""Ring-buffer experience replay with in-place argmax amortization.

Each stored transition carries ``amax``, the best known maximizer of Q at
its successor state. Replays refine it and write it back.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .distributions import ActionSpace

log = logging.getLogger(__name__)

PRIORITY_FLOOR = 1e-6


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    discount: float
    amax: np.ndarray


@dataclass
class Batch:
    slots: np.ndarray
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    discount: np.ndarray
    amax: np.ndarray
    weights: np.ndarray
    generation: np.ndarray

    def __len__(self):
        return self.slots.shape[0]


class SumTree:
    """Binary sum tree over ``capacity`` leaves with vectorized query and update."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self.leaves = size
        self.tree = np.zeros(2 * size)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def get(self, idx) -> np.ndarray:
        return self.tree[self.leaves + np.asarray(idx)]

    def max(self, n: int) -> float:
        return float(self.tree[self.leaves:self.leaves + n].max()) if n else 0.0

    def update(self, idx, value) -> None:
        if np.isscalar(idx) or np.ndim(idx) == 0:
            i = int(idx) + self.leaves
            self.tree[i] = value
            i //= 2
            while i >= 1:
                self.tree[i] = self.tree[2 * i] + self.tree[2 * i + 1]
                i //= 2
            return
        idx = np.atleast_1d(np.asarray(idx)) + self.leaves
        self.tree[idx] = value
        idx = np.unique(idx // 2)
        while idx[0] >= 1:
            self.tree[idx] = self.tree[2 * idx] + self.tree[2 * idx + 1]
            if idx[0] == 1:
                break
            idx = np.unique(idx // 2)

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative-sum interval contains each ``mass``."""
        mass = np.array(mass, dtype=np.float64)
        node = np.ones(mass.shape, dtype=np.int64)
        while node[0] < self.leaves:
            left = 2 * node
            lsum = self.tree[left]
            go_right = mass >= lsum
            # never step into an empty right subtree because of rounding
            go_right &= self.tree[left + 1] > 0
            mass = np.where(go_right, mass - lsum, mass)
            node = np.where(go_right, left + 1, left)
        return node - self.leaves


class ReplayBuffer:
    """Uniform or proportional-prioritized replay over a fixed-size ring."""

    def __init__(self, capacity: int, space: ActionSpace, prioritized: bool = True,
                 alpha: float = 0.6, beta: float = 0.2, start_size: int = 1000):
        self.capacity = capacity
        self.space = space
        self.prioritized = prioritized
        self.alpha, self.beta = alpha, beta
        self.start_size = start_size
        self.size = 0
        self.next_slot = 0
        self._store = None
        # incremented per slot on overwrite so late updates to a reused slot are dropped
        self.generation = np.zeros(capacity, dtype=np.int64)
        self.tree = SumTree(capacity) if prioritized else None
        self.max_priority = 1.0

    def __len__(self):
        return self.size

    def _allocate(self, t: Transition):
        def arr(x):
            x = np.asarray(x, dtype=np.float64)
            return np.zeros((self.capacity,) + x.shape)
        self._store = {
            "obs": arr(t.obs), "action": arr(t.action), "reward": np.zeros(self.capacity),
            "next_obs": arr(t.next_obs), "discount": np.zeros(self.capacity), "amax": arr(t.amax),
        }

    def push(self, t: Transition) -> int:
        if self._store is None:
            self._allocate(t)
        slot = self.next_slot
        s = self._store
        s["obs"][slot] = t.obs
        s["action"][slot] = t.action
        s["reward"][slot] = t.reward
        s["next_obs"][slot] = t.next_obs
        s["discount"][slot] = t.discount
        s["amax"][slot] = self.space.clip(np.asarray(t.amax, dtype=np.float64))
        if self.size == self.capacity:
            self.generation[slot] += 1
        if self.tree is not None:
            self.tree.update(slot, self.max_priority ** self.alpha)
        self.next_slot = (slot + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def transition(self, slot: int) -> Transition:
        s = self._store
        return Transition(s["obs"][slot].copy(), s["action"][slot].copy(), float(s["reward"][slot]),
                          s["next_obs"][slot].copy(), float(s["discount"][slot]), s["amax"][slot].copy())

    def can_sample(self) -> bool:
        return self.size >= self.start_size

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if not self.can_sample():
            raise RuntimeError(f"replay holds {self.size} < start size {self.start_size}")
        if self.tree is None:
            slots = rng.integers(0, self.size, size=n)
            weights = np.ones(n)
        else:
            total = self.tree.total
            # stratified: one draw per equal-mass segment
            mass = (np.arange(n) + rng.random(n)) * (total / n)
            slots = np.minimum(self.tree.find(mass), self.size - 1)
            probs = self.tree.get(slots) / total
            w = (self.size * probs) ** (-self.beta)
            weights = w / w.max()
        return self._batch(slots, weights)

    def gather(self, slots) -> Batch:
        """The stored transitions at ``slots`` with unit importance weights."""
        slots = np.asarray(slots, dtype=np.int64)
        if np.any(slots < 0) or np.any(slots >= self.size):
            raise IndexError("slot outside the filled part of the buffer")
        return self._batch(slots, np.ones(len(slots)))

    def _batch(self, slots, weights) -> Batch:
        s = self._store
        return Batch(slots, s["obs"][slots], s["action"][slots], s["reward"][slots],
                     s["next_obs"][slots], s["discount"][slots], s["amax"][slots].copy(),
                     weights, self.generation[slots].copy())

    def _live(self, slots, generation):
        slots = np.atleast_1d(slots)
        if generation is None:
            return slots, np.ones(slots.shape, dtype=bool)
        ok = self.generation[slots] == np.atleast_1d(generation)
        if not ok.all():
            log.warning("ignoring %d updates to overwritten slots", int((~ok).sum()))
        return slots, ok

    def update_amax(self, slots, amax, generation=None) -> None:
        slots, ok = self._live(slots, generation)
        amax = np.asarray(amax, dtype=np.float64).reshape(len(slots), -1)
        clipped = self.space.clip(amax)
        if not np.array_equal(clipped, amax):
            log.warning("argmax update outside the action box; clamped")
        self._store["amax"][slots[ok]] = clipped[ok]

    def update_priority(self, slots, td_error, generation=None) -> None:
        if self.tree is None:
            return
        slots, ok = self._live(slots, generation)
        p = np.abs(np.atleast_1d(td_error)).astype(np.float64) + PRIORITY_FLOOR
        if not ok.any():
            return
        # duplicate slots in one batch: the last write wins, as with sequential updates
        self.tree.update(slots[ok], p[ok] ** self.alpha)
        self.max_priority = max(self.max_priority, float(p[ok].max()))
