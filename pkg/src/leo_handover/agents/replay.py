"""FIFO replay memory with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    obs: np.ndarray  # [4, N]
    prev: int
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Ring buffer over preallocated arrays."""

    def __init__(self, capacity: int, num_sats: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, 4, num_sats))
        self.next_obs = np.zeros((capacity, 4, num_sats))
        self.prev = np.zeros(capacity, dtype=np.int64)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def add(self, obs, prev, action, reward, next_obs, terminal) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.prev[i] = prev
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.terminal[i] = terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push(self, t: Transition) -> None:
        self.add(t.obs, t.prev, t.action, t.reward, t.next_obs, t.terminal)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        n = min(batch_size, self.size)
        idx = rng.choice(self.size, size=n, replace=False)
        return {"obs": self.obs[idx], "prev": self.prev[idx], "action": self.action[idx],
                "reward": self.reward[idx], "next_obs": self.next_obs[idx], "terminal": self.terminal[idx]}
