"""Pure-strategy Nash selection on the satellite congestion game.

Agent ``k`` earns ``values[k, n]`` on satellite ``n`` and loses ``beta`` more
when its presence pushes ``n`` past ``capacity`` users.  Best responses are
taken one agent at a time in priority order until a full sweep changes
nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import kernels


@dataclass
class NashResult:
    actions: np.ndarray
    converged: bool
    rounds: int


def independent_argmax(values: np.ndarray) -> np.ndarray:
    out = np.full(values.shape[0], -1, dtype=np.int64)
    for k, row in enumerate(values):
        if np.isfinite(row).any():
            out[k] = int(np.argmax(row))
    return out


def nash_select(values, capacity: int, order=None, beta: float = 1.0, max_rounds: Optional[int] = None,
                init=None, temperature: float = 0.0, eps: float = 0.0,
                rng: Optional[np.random.Generator] = None) -> NashResult:
    """Run best-response dynamics from ``init`` (default: every agent's own argmax).

    ``values`` is ``[K, N]`` with ``-inf`` where a satellite is unavailable.
    ``temperature`` > 0 draws each response from a Boltzmann distribution and
    ``eps`` > 0 mixes in uniform exploration; both need ``rng``.  Without
    convergence the best-welfare profile seen is returned with
    ``converged=False``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    K = values.shape[0]
    order = np.arange(K, dtype=np.int64) if order is None else np.ascontiguousarray(order, dtype=np.int64)
    max_rounds = 8 * max(K, 1) if max_rounds is None else int(max_rounds)
    init = independent_argmax(values) if init is None else np.ascontiguousarray(init, dtype=np.int64)
    if (temperature > 0 or eps > 0) and rng is None:
        raise ValueError("stochastic best responses need an rng")
    uniforms = rng.random((max_rounds, K, 2)) if rng is not None else np.zeros((max_rounds, K, 2))
    actions, converged, rounds = kernels.best_response(values, order, int(capacity), float(beta), max_rounds,
                                                       init.copy(), float(temperature), float(eps), uniforms)
    return NashResult(np.asarray(actions, dtype=np.int64), bool(converged), int(rounds))


def payoff(values, actions, k, n, capacity, beta):
    """Payoff of agent ``k`` for satellite ``n`` with everyone else fixed."""
    others = np.delete(np.asarray(actions), k)
    load = int(np.sum(others == n))
    return values[k, n] - (beta if load + 1 > capacity else 0.0)


def profitable_deviations(values, actions, capacity, beta, tol=1e-9):
    """List ``(agent, better_sat, gain)`` for every profitable unilateral deviation."""
    values = np.asarray(values, dtype=np.float64)
    found = []
    for k in range(values.shape[0]):
        avail = np.flatnonzero(np.isfinite(values[k]))
        if avail.size == 0:
            continue
        a = actions[k]
        cur = payoff(values, actions, k, a, capacity, beta) if a >= 0 else -np.inf
        for n in avail:
            gain = payoff(values, actions, k, n, capacity, beta) - cur
            if gain > tol:
                found.append((k, int(n), float(gain)))
    return found
