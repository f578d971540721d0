"""Single-criterion baseline policies.

Each takes one agent's ``[4, N]`` observation matrix (rows: coverage,
occupancy, CINR, remaining visible time) and the agent's previous choice.
"""

import numpy as np

from ..env import NO_SERVICE


def _covered(obs):
    return np.flatnonzero(np.asarray(obs)[0] > 0.5)


def mrst_policy(obs, prev: int = NO_SERVICE) -> int:
    """Keep the current satellite while it covers the user, else take the longest remaining visibility."""
    obs = np.asarray(obs)
    cand = _covered(obs)
    if cand.size == 0:
        return NO_SERVICE
    if prev >= 0 and obs[0, prev] > 0.5:
        return int(prev)
    rho = obs[3, cand]
    return int(cand[np.argmax(rho)])


def mac_policy(obs, prev: int = NO_SERVICE) -> int:
    """Most idle channels; ties by CINR then lowest id."""
    obs = np.asarray(obs)
    cand = _covered(obs)
    if cand.size == 0:
        return NO_SERVICE
    # lexsort: last key primary -> fewest occupied, then highest CINR, then lowest id
    order = np.lexsort((cand, -obs[2, cand], obs[1, cand]))
    return int(cand[order[0]])


def mis_policy(obs, prev: int = NO_SERVICE) -> int:
    """Strongest instantaneous CINR."""
    obs = np.asarray(obs)
    cand = _covered(obs)
    if cand.size == 0:
        return NO_SERVICE
    return int(cand[np.argmax(obs[2, cand])])


HEURISTICS = {"mrst": mrst_policy, "mac": mac_policy, "mis": mis_policy}
