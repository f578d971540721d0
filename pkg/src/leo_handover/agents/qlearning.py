"""Distributed tabular Q-learning with epsilon-greedy exploration.

The raw per-satellite observation is far too large for a table, so each agent
sees a coarse key built from its current satellite and three candidates
(longest visibility, strongest CINR, most idle channels), and its actions are
"keep", "go to best-rho", "go to best-CINR", "go to most-idle".
"""

from __future__ import annotations

from collections import defaultdict
from typing import Hashable

import numpy as np

from ..env import NO_SERVICE

KEEP, BEST_RHO, BEST_CINR, BEST_IDLE = range(4)
NUM_ACTIONS = 4

RHO_EDGES = (0.25, 0.5, 0.75)  # fraction of the episode horizon
CINR_EDGES = (0.0, 5.0, 10.0)  # dB


class QTable:
    """Zero-initialised action-value table over hashable states."""

    def __init__(self, num_actions: int, lr: float = 0.1, gamma: float = 0.9):
        self.num_actions = num_actions
        self.lr = lr
        self.gamma = gamma
        self.q = defaultdict(lambda: np.zeros(num_actions))

    def row(self, state: Hashable) -> np.ndarray:
        return self.q[state]

    def greedy(self, state, valid=None) -> int:
        row = self.q[state]
        if valid is not None:
            row = np.where(valid, row, -np.inf)
        return int(np.argmax(row))

    def act(self, state, eps: float, rng: np.random.Generator, valid=None) -> int:
        if eps > 0 and rng.random() < eps:
            choices = np.flatnonzero(valid) if valid is not None else np.arange(self.num_actions)
            return int(rng.choice(choices))
        return self.greedy(state, valid)

    def learn(self, s, a, r, s2, terminal: bool, valid2=None) -> float:
        """One TD(0) update; returns the new value."""
        if terminal:
            target = r
        else:
            row = self.q[s2]
            if valid2 is not None:
                row = np.where(valid2, row, -np.inf)
            best = row.max()
            target = r + self.gamma * (best if np.isfinite(best) else 0.0)
        q = self.q[s]
        q[a] += self.lr * (target - q[a])
        return float(q[a])


def _bin(x, edges):
    return int(np.searchsorted(edges, x, side="right"))


def discretize(obs, prev: int, capacity: int, horizon: float):
    """Return ``(state_key, candidate_sats[4])``; invalid candidates are ``NO_SERVICE``."""
    obs = np.asarray(obs)
    cov = obs[0] > 0.5
    cand = np.flatnonzero(cov)
    targets = np.full(NUM_ACTIONS, NO_SERVICE, dtype=np.int64)
    cur_ok = prev >= 0 and bool(cov[prev])

    def feats(n):
        idle = capacity - obs[1, n]
        idle_bin = 0 if idle <= 0 else (1 if idle < capacity / 2 else 2)
        return (_bin(obs[3, n] / horizon, RHO_EDGES), _bin(obs[2, n], CINR_EDGES), int(idle_bin))

    key = [cur_ok]
    if cur_ok:
        targets[KEEP] = prev
        key.append(feats(prev))
    if cand.size:
        targets[BEST_RHO] = cand[np.argmax(obs[3, cand])]
        targets[BEST_CINR] = cand[np.argmax(obs[2, cand])]
        targets[BEST_IDLE] = cand[np.lexsort((cand, -obs[2, cand], obs[1, cand]))[0]]
        for a in (BEST_RHO, BEST_CINR, BEST_IDLE):
            n = targets[a]
            key.append((bool(n == prev),) + feats(n))
    return tuple(key), targets
