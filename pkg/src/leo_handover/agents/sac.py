"""Discrete soft actor-critic with twin critics and learned temperature."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import nn
from ..nn import AdamState, Mlp, adam_step, masked_log_softmax, masked_softmax

NUM_FEATURES = 5


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, losses: dict):
        super().__init__(f"non-finite loss at update {step}: {losses}")
        self.step = step
        self.losses = losses


# ---------------------------------------------------------------------------
# Loss terms, one state (row) or a batch of rows at a time
# ---------------------------------------------------------------------------

def _plogp_safe(pi, x):
    return np.where(pi > 0, pi * x, 0.0)


def soft_state_value(pi, q, alpha):
    """``pi . (q - alpha * log pi)`` over the support of ``pi``; works on rows or batches."""
    pi = np.asarray(pi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)
        inner = np.where(pi > 0, np.asarray(q, dtype=np.float64) - alpha * logp, 0.0)
    return np.sum(pi * inner, axis=-1)


def entropy(pi):
    pi = np.asarray(pi, dtype=np.float64)
    logp = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    return -np.sum(pi * logp, axis=-1)


def temperature_loss(pi, alpha, target_entropy):
    """``pi . (-alpha (log pi + H_target))``; equals ``alpha * (H(pi) - H_target)``."""
    pi = np.asarray(pi, dtype=np.float64)
    logp = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    return np.sum(_plogp_safe(pi, -alpha * (logp + np.asarray(target_entropy)[..., None])), axis=-1)


def policy_loss(pi, log_pi, q_min, alpha):
    """Batch mean of ``pi . (alpha log pi - q_min)``."""
    pi = np.atleast_2d(pi)
    if pi.shape[0] == 0:
        raise ValueError("empty batch")
    inner = np.where(pi > 0, alpha * np.atleast_2d(log_pi) - np.where(pi > 0, np.atleast_2d(q_min), 0.0), 0.0)
    return float(np.mean(np.sum(pi * inner, axis=-1)))


def q_loss(q_taken, reward, terminal, next_value, gamma):
    """Mean half squared soft Bellman residual; terminal rows drop the bootstrap."""
    q_taken = np.atleast_1d(np.asarray(q_taken, dtype=np.float64))
    if q_taken.size == 0:
        raise ValueError("empty batch")
    target = np.asarray(reward) + gamma * (1.0 - np.asarray(terminal, dtype=np.float64)) * np.asarray(next_value)
    return float(np.mean(0.5 * (q_taken - target) ** 2))


# ---------------------------------------------------------------------------
# Observation features and score networks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    """Scales that bring the raw observation rows to O(1)."""

    capacity: int
    horizon: float
    cinr_max: float = 30.0

    def __call__(self, obs, prev) -> np.ndarray:
        """``[B,4,N]`` observations + previous choice -> ``[B,N,5]`` per-satellite features."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim == 2:
            obs = obs[None]
        prev = np.atleast_1d(np.asarray(prev, dtype=np.int64))
        B, _, N = obs.shape
        cov = obs[:, 0] > 0.5
        feats = np.zeros((B, N, NUM_FEATURES))
        feats[..., 0] = cov
        feats[..., 1] = obs[:, 1] / self.capacity
        feats[..., 2] = np.where(cov, np.nan_to_num(obs[:, 2], neginf=0.0, posinf=0.0), 0.0) / self.cinr_max
        feats[..., 3] = obs[:, 3] / self.horizon
        rows = np.flatnonzero(prev >= 0)
        feats[rows, prev[rows], 4] = 1.0
        return feats


class ScoreNet:
    """One score per satellite.

    ``shared``: the same MLP scores every satellite column (permutation
    equivariant, independent of N).  ``dense``: one MLP over the flattened
    observation with an N-wide head.
    """

    def __init__(self, num_sats: int, hidden: Sequence[int], rng: np.random.Generator, arch: str = "shared"):
        if arch not in ("shared", "dense"):
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.num_sats = num_sats
        if arch == "shared":
            self.net = Mlp([NUM_FEATURES, *hidden, 1], rng)
        else:
            self.net = Mlp([NUM_FEATURES * num_sats, *hidden, num_sats], rng)

    @property
    def params(self):
        return self.net.params

    def copy(self) -> "ScoreNet":
        other = ScoreNet.__new__(ScoreNet)
        other.arch, other.num_sats, other.net = self.arch, self.num_sats, self.net.copy()
        return other

    def forward(self, feats, mask=None):
        """Scores ``[B, N]``.  With a ``mask`` the shared scorer only runs on
        unmasked columns; masked entries come back as 0 and get no gradient."""
        B, N, F = feats.shape
        if self.arch == "shared":
            flat = feats.reshape(B * N, F)
            if mask is None:
                out, cache = nn.forward(self.net, flat)
                return out.reshape(B, N), (None, cache)
            rows = np.flatnonzero(np.asarray(mask).reshape(B * N))
            out = np.zeros(B * N)
            sub, cache = nn.forward(self.net, flat[rows])
            out[rows] = sub[:, 0]
            return out.reshape(B, N), (rows, cache)
        out, cache = nn.forward(self.net, feats.reshape(B, N * F))
        return out, (None, cache)

    def backward(self, cache, dscores):
        rows, cache = cache
        B, N = dscores.shape
        if self.arch == "shared":
            g = dscores.reshape(B * N, 1)
            if rows is not None:
                g = g[rows]
        else:
            g = dscores
        grads, _ = nn.backward(self.net, cache, g)
        return grads

    def __call__(self, feats, mask=None):
        return self.forward(feats, mask)[0]


def _mask(obs):
    obs = np.asarray(obs)
    if obs.ndim == 2:
        obs = obs[None]
    return obs[:, 0] > 0.5


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------

class SacAgent:
    def __init__(self, num_sats: int, features: FeatureSpec, rng: np.random.Generator, *,
                 hidden=(64, 64), arch: str = "shared", gamma: float = 0.99, tau: float = 0.02,
                 lr_q: float = 3e-4, lr_pi: float = 3e-4, lr_alpha: float = 3e-4,
                 init_alpha: float = 0.1, entropy_ratio: float = 0.6):
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if init_alpha <= 0:
            raise ValueError("alpha must be > 0")
        self.num_sats = num_sats
        self.features = features
        self.gamma, self.tau = gamma, tau
        self.entropy_ratio = entropy_ratio
        self.policy = ScoreNet(num_sats, hidden, rng, arch)
        self.q1 = ScoreNet(num_sats, hidden, rng, arch)
        self.q2 = ScoreNet(num_sats, hidden, rng, arch)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = np.array([math.log(init_alpha)])
        self.opt_pi = AdamState.for_params(self.policy.params, lr_pi)
        self.opt_q1 = AdamState.for_params(self.q1.params, lr_q)
        self.opt_q2 = AdamState.for_params(self.q2.params, lr_q)
        self.opt_alpha = AdamState.for_params([self.log_alpha], lr_alpha)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(math.exp(self.log_alpha[0]))

    # -- inference ---------------------------------------------------------
    def distribution(self, obs, prev):
        feats = self.features(obs, prev)
        mask = _mask(obs)
        logits = self.policy(feats, mask)
        return masked_softmax(logits, mask), masked_log_softmax(logits, mask), mask

    def q_min(self, obs, prev):
        feats = self.features(obs, prev)
        mask = _mask(obs)
        return np.minimum(self.q1(feats, mask), self.q2(feats, mask))

    def preference_values(self, obs, prev):
        """``alpha * log pi(n|s) + min(Q1, Q2)(s, n)``; ``-inf`` off the covered set."""
        pi, logp, mask = self.distribution(obs, prev)
        v = self.alpha * logp + self.q_min(obs, prev)
        return np.where(mask, v, -np.inf)

    def target_entropy(self, mask):
        n = np.maximum(mask.sum(axis=-1), 1)
        return self.entropy_ratio * np.log(n)

    # -- learning ----------------------------------------------------------
    def td_target(self, batch):
        feats2 = self.features(batch["next_obs"], batch["action"])
        mask2 = _mask(batch["next_obs"])
        logits2 = self.policy(feats2, mask2)
        pi2 = masked_softmax(logits2, mask2)
        qmin2 = np.minimum(self.q1_target(feats2, mask2), self.q2_target(feats2, mask2))
        v2 = soft_state_value(pi2, np.where(mask2, qmin2, 0.0), self.alpha)
        return batch["reward"] + self.gamma * (1.0 - batch["terminal"].astype(np.float64)) * v2

    def critic_loss(self, batch, which: int = 1, target=None):
        net = self.q1 if which == 1 else self.q2
        y = self.td_target(batch) if target is None else target
        q = net(self.features(batch["obs"], batch["prev"]), _mask(batch["obs"]))
        idx = np.arange(q.shape[0])
        return q_loss(q[idx, batch["action"]], y, np.zeros_like(y), np.zeros_like(y), self.gamma)

    def actor_loss(self, batch):
        pi, logp, mask = self.distribution(batch["obs"], batch["prev"])
        return policy_loss(pi, logp, self.q_min(batch["obs"], batch["prev"]), self.alpha)

    def alpha_loss(self, batch, alpha=None):
        pi, _, mask = self.distribution(batch["obs"], batch["prev"])
        a = self.alpha if alpha is None else alpha
        return float(np.mean(temperature_loss(pi, a, self.target_entropy(mask))))

    def gradients(self, batch):
        """Losses and parameter gradients of all three objectives at the current parameters."""
        feats = self.features(batch["obs"], batch["prev"])
        mask = _mask(batch["obs"])
        B = feats.shape[0]
        if B == 0:
            raise ValueError("empty batch")
        idx = np.arange(B)
        alpha = self.alpha
        y = self.td_target(batch)

        out = {"loss": {}, "grad": {}}
        qs = []
        for name, net in (("q1", self.q1), ("q2", self.q2)):
            q, cache = net.forward(feats, mask)
            qs.append(q)
            resid = q[idx, batch["action"]] - y
            d = np.zeros_like(q)
            d[idx, batch["action"]] = resid / B
            out["loss"][name] = float(np.mean(0.5 * resid ** 2))
            out["grad"][name] = net.backward(cache, d)

        qmin = np.minimum(qs[0], qs[1])
        logits, cache = self.policy.forward(feats, mask)
        pi = masked_softmax(logits, mask)
        logp = masked_log_softmax(logits, mask)
        g = np.where(mask, alpha * logp - np.where(mask, qmin, 0.0), 0.0)
        out["loss"]["pi"] = policy_loss(pi, logp, qmin, alpha)
        expect = np.sum(pi * g, axis=-1, keepdims=True)
        dlogits = pi * (g - expect) / B
        out["grad"]["pi"] = self.policy.backward(cache, dlogits)

        h = entropy(pi)
        h_target = self.target_entropy(mask)
        out["loss"]["alpha"] = float(np.mean(alpha * (h - h_target)))
        out["grad"]["alpha_raw"] = float(np.mean(h - h_target))  # d/d alpha
        out["grad"]["log_alpha"] = [np.array([alpha * np.mean(h - h_target)])]
        out["entropy"] = float(np.mean(h))
        return out

    def update(self, batch) -> dict:
        res = self.gradients(batch)
        self.updates += 1
        losses = res["loss"]
        if not all(np.isfinite(v) for v in losses.values()):
            raise TrainingDiverged(self.updates, losses)
        adam_step(self.q1.params, res["grad"]["q1"], self.opt_q1)
        adam_step(self.q2.params, res["grad"]["q2"], self.opt_q2)
        adam_step(self.policy.params, res["grad"]["pi"], self.opt_pi)
        adam_step([self.log_alpha], res["grad"]["log_alpha"], self.opt_alpha)
        self.soft_update()
        return {**losses, "entropy": res["entropy"], "alpha": self.alpha}

    def soft_update(self) -> None:
        self.q1_target.net.soft_update(self.q1.net, self.tau)
        self.q2_target.net.soft_update(self.q2.net, self.tau)

    # -- persistence -------------------------------------------------------
    def state(self):
        nets = {"policy": self.policy.net, "q1": self.q1.net, "q2": self.q2.net,
                "q1_target": self.q1_target.net, "q2_target": self.q2_target.net}
        opts = {"policy": self.opt_pi, "q1": self.opt_q1, "q2": self.opt_q2, "alpha": self.opt_alpha}
        scalars = {"log_alpha": self.log_alpha.copy(), "updates": float(self.updates)}
        return nets, opts, scalars

    def load_state(self, nets, opts, scalars) -> None:
        for name, sn in (("policy", self.policy), ("q1", self.q1), ("q2", self.q2),
                         ("q1_target", self.q1_target), ("q2_target", self.q2_target)):
            sn.net.load_params(nets[name].params)
        self.opt_pi, self.opt_q1, self.opt_q2, self.opt_alpha = (opts["policy"], opts["q1"], opts["q2"],
                                                                opts["alpha"])
        self.log_alpha = np.asarray(scalars["log_alpha"], dtype=np.float64).reshape(1).copy()
        self.updates = int(scalars["updates"])
