"""Deep Q-network used by the Nash-DQN baseline."""

from __future__ import annotations

import numpy as np

from ..nn import AdamState, adam_step
from .sac import FeatureSpec, ScoreNet, TrainingDiverged, _mask


class DqnAgent:
    def __init__(self, num_sats: int, features: FeatureSpec, rng: np.random.Generator, *,
                 hidden=(64, 64), arch: str = "shared", gamma: float = 0.99, tau: float = 0.02, lr: float = 3e-4,
                 double: bool = True):
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        self.features = features
        self.gamma, self.tau = gamma, tau
        self.double = double
        self.q = ScoreNet(num_sats, hidden, rng, arch)
        self.q_target = self.q.copy()
        self.opt = AdamState.for_params(self.q.params, lr)
        self.updates = 0

    def values(self, obs, prev):
        mask = _mask(obs)
        q = self.q(self.features(obs, prev), mask)
        return np.where(mask, q, -np.inf)

    def td_target(self, batch):
        feats2 = self.features(batch["next_obs"], batch["action"])
        mask2 = _mask(batch["next_obs"])
        q2 = self.q_target(feats2, mask2)
        if self.double:
            # online network picks the action, target network scores it
            pick = np.argmax(np.where(mask2, self.q(feats2, mask2), -np.inf), axis=-1)
            best = np.where(mask2.any(axis=-1), q2[np.arange(q2.shape[0]), pick], 0.0)
        else:
            best = np.where(mask2, q2, -np.inf).max(axis=-1)
            best = np.where(np.isfinite(best), best, 0.0)
        return batch["reward"] + self.gamma * (1.0 - batch["terminal"].astype(np.float64)) * best

    def loss_and_grads(self, batch):
        feats = self.features(batch["obs"], batch["prev"])
        B = feats.shape[0]
        idx = np.arange(B)
        y = self.td_target(batch)
        q, cache = self.q.forward(feats, _mask(batch["obs"]))
        resid = q[idx, batch["action"]] - y
        d = np.zeros_like(q)
        d[idx, batch["action"]] = resid / B
        return float(np.mean(0.5 * resid ** 2)), self.q.backward(cache, d)

    def update(self, batch) -> dict:
        loss, grads = self.loss_and_grads(batch)
        self.updates += 1
        if not np.isfinite(loss):
            raise TrainingDiverged(self.updates, {"q": loss})
        adam_step(self.q.params, grads, self.opt)
        self.q_target.net.soft_update(self.q.net, self.tau)
        return {"q1": loss}

    def state(self):
        return ({"q": self.q.net, "q_target": self.q_target.net}, {"q": self.opt},
                {"updates": float(self.updates)})

    def load_state(self, nets, opts, scalars) -> None:
        self.q.net.load_params(nets["q"].params)
        self.q_target.net.load_params(nets["q_target"].params)
        self.opt = opts["q"]
        self.updates = int(scalars["updates"])
