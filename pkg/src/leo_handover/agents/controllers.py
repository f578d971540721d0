"""Joint-action controllers: one object decides for all agents of an environment."""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import nn
from ..env import NO_SERVICE, HandoverEnv, StepResult
from ..seeding import stream
from .dqn import DqnAgent
from .heuristics import HEURISTICS
from .nash import independent_argmax, nash_select
from .qlearning import NUM_ACTIONS, QTable, discretize
from .replay import ReplayBuffer
from .sac import FeatureSpec, SacAgent


class Controller:
    name = "base"
    learns = False

    def begin_episode(self, env: HandoverEnv, episode: int, explore: bool) -> None:
        self.episode_stats = {}

    def act(self, env: HandoverEnv, obs: np.ndarray, explore: bool) -> np.ndarray:
        raise NotImplementedError

    def feedback(self, env: HandoverEnv, obs, prev, actions, result: StepResult, explore: bool) -> None:
        pass

    def end_episode(self) -> dict:
        return {}


class HeuristicController(Controller):
    def __init__(self, name: str):
        self.name = name
        self.fn = HEURISTICS[name]

    def act(self, env, obs, explore):
        return np.array([self.fn(obs[k], int(env.prev_action[k])) for k in range(env.num_users)], dtype=np.int64)


# ---------------------------------------------------------------------------
# Tabular Q-learning
# ---------------------------------------------------------------------------

@dataclass
class QLearningConfig:
    lr: float = 0.1
    gamma: float = 0.9
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.8


class QLearningController(Controller):
    name = "qlearning"
    learns = True

    def __init__(self, num_users: int, cfg: QLearningConfig, seed: int, episodes: int):
        self.cfg = cfg
        self.seed = seed
        self.episodes = max(int(episodes), 1)
        self.tables = [QTable(NUM_ACTIONS, cfg.lr, cfg.gamma) for _ in range(num_users)]
        self.eps = cfg.eps_start

    def begin_episode(self, env, episode, explore):
        super().begin_episode(env, episode, explore)
        frac = min(1.0, episode / max(1.0, self.cfg.eps_decay_fraction * self.episodes))
        self.eps = self.cfg.eps_start + (self.cfg.eps_end - self.cfg.eps_start) * frac
        self.rng = stream(self.seed, "qlearning", "episode", episode)
        self._pending = None

    def act(self, env, obs, explore):
        L, horizon = env.params.capacity, env.geo.horizon
        actions = np.full(env.num_users, NO_SERVICE, dtype=np.int64)
        pending = []
        for k in range(env.num_users):
            key, targets = discretize(obs[k], int(env.prev_action[k]), L, horizon)
            valid = targets >= 0
            if not valid.any():
                pending.append(None)
                continue
            idx = self.tables[k].act(key, self.eps if explore else 0.0, self.rng, valid)
            actions[k] = targets[idx]
            pending.append((key, idx))
        self._pending = pending
        return actions

    def feedback(self, env, obs, prev, actions, result, explore):
        if not explore:
            return
        L, horizon = env.params.capacity, env.geo.horizon
        for k, item in enumerate(self._pending):
            if item is None:
                continue
            key, idx = item
            key2, targets2 = discretize(result.observations[k], int(actions[k]), L, horizon)
            self.tables[k].learn(key, idx, float(result.reward[k]), key2, result.done, targets2 >= 0)

    def save(self, directory) -> None:
        data = [{repr(k): v.tolist() for k, v in t.q.items()} for t in self.tables]
        Path(directory, "qtables.json").write_text(json.dumps(data, sort_keys=True))

    def load(self, directory) -> None:
        data = json.loads(Path(directory, "qtables.json").read_text())
        for t, d in zip(self.tables, data):
            t.q.clear()
            for k, v in d.items():
                t.q[ast.literal_eval(k)] = np.array(v, dtype=np.float64)


# ---------------------------------------------------------------------------
# Nash-SAC / Nash-DQN
# ---------------------------------------------------------------------------

@dataclass
class DeepConfig:
    hidden: tuple = (64, 64)
    arch: str = "shared"
    share_weights: bool = True
    gamma: float = 0.99
    tau: float = 0.02
    lr_q: float = 3e-4
    lr_pi: float = 3e-4
    lr_alpha: float = 3e-4
    init_alpha: float = 0.1
    entropy_ratio: float = 0.6
    batch_size: int = 64
    buffer_size: int = 50_000
    warmup: int = 64
    gradient_steps: int = 1
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.8
    max_rounds_per_agent: int = 8
    # overload penalty used inside the selection game; None -> beta / (1 - gamma),
    # i.e. the one-step penalty expressed on the discounted-return scale of the values
    congestion_penalty: float = None
    double_q: bool = True  # Nash-DQN only


def incumbent_start(values, prev) -> np.ndarray:
    """Best-response starting profile: keep the previous satellite where it is still available."""
    init = independent_argmax(values)
    prev = np.asarray(prev)
    for k, a in enumerate(prev):
        if a >= 0 and np.isfinite(values[k, a]):
            init[k] = a
    return init


class _DeepController(Controller):
    learns = True

    def __init__(self, num_users: int, num_sats: int, features: FeatureSpec, cfg: DeepConfig, seed: int,
                 episodes: int):
        self.cfg = cfg
        self.seed = seed
        self.episodes = max(int(episodes), 1)
        self.num_users = num_users
        n_agents = 1 if cfg.share_weights else num_users
        init_rng = stream(seed, self.name, "init")
        self.agents = [self._make_agent(num_sats, features, init_rng) for _ in range(n_agents)]
        self.buffers = [ReplayBuffer(cfg.buffer_size, num_sats) for _ in range(n_agents)]
        self.nonconverged = 0

    def _owner(self, k: int) -> int:
        return 0 if self.cfg.share_weights else k

    def begin_episode(self, env, episode, explore):
        super().begin_episode(env, episode, explore)
        self.rng = stream(self.seed, self.name, "episode", episode)
        self._losses = []
        self._returns = np.zeros(env.num_users)
        self.max_rounds = self.cfg.max_rounds_per_agent * env.num_users
        pen = self.cfg.congestion_penalty
        self.penalty = env.params.beta / (1.0 - self.cfg.gamma) if pen is None else float(pen)

    def feedback(self, env, obs, prev, actions, result, explore):
        self._returns += result.reward
        if not explore:
            return
        for k in range(env.num_users):
            if actions[k] < 0:
                continue
            self.buffers[self._owner(k)].add(obs[k], prev[k], actions[k], result.reward[k],
                                             result.observations[k], result.done)
        for agent, buf in zip(self.agents, self.buffers):
            if len(buf) < max(self.cfg.warmup, 1):
                continue
            for _ in range(self.cfg.gradient_steps):
                self._losses.append(agent.update(buf.sample(self.cfg.batch_size, self.rng)))

    def end_episode(self):
        out = {"mean_return": float(np.mean(self._returns))}
        if self._losses:
            for key in ("q1", "pi", "entropy", "alpha"):
                vals = [d[key] for d in self._losses if key in d]
                if vals:
                    out[key] = float(np.mean(vals))
        return out

    def _values(self, obs, prev):
        if self.cfg.share_weights:
            return self._agent_values(self.agents[0], obs, prev)
        return np.concatenate([self._agent_values(a, obs[k:k + 1], prev[k:k + 1])
                               for k, a in enumerate(self.agents)])

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i, (agent, buf) in enumerate(zip(self.agents, self.buffers)):
            nets, opts, scalars = agent.state()
            nn.save_checkpoint(directory / f"agent{i}.npz", nets, opts, scalars,
                               meta={"controller": self.name, "agent": i})
            with open(directory / f"replay{i}.npz", "wb") as fh:
                np.savez(fh, obs=buf.obs[:buf.size], prev=buf.prev[:buf.size], action=buf.action[:buf.size],
                         reward=buf.reward[:buf.size], next_obs=buf.next_obs[:buf.size],
                         terminal=buf.terminal[:buf.size], cursor=np.array([buf.cursor]))

    def load(self, directory) -> None:
        directory = Path(directory)
        for i, (agent, buf) in enumerate(zip(self.agents, self.buffers)):
            nets, opts, scalars, _ = nn.load_checkpoint(directory / f"agent{i}.npz")
            agent.load_state(nets, opts, scalars)
            path = directory / f"replay{i}.npz"
            if path.exists():
                with np.load(path) as z:
                    n = z["obs"].shape[0]
                    buf.obs[:n], buf.prev[:n], buf.action[:n] = z["obs"], z["prev"], z["action"]
                    buf.reward[:n], buf.next_obs[:n], buf.terminal[:n] = z["reward"], z["next_obs"], z["terminal"]
                    buf.size, buf.cursor = n, int(z["cursor"][0])


class NashSacController(_DeepController):
    name = "nash-sac"

    def _make_agent(self, num_sats, features, rng):
        c = self.cfg
        return SacAgent(num_sats, features, rng, hidden=c.hidden, arch=c.arch, gamma=c.gamma, tau=c.tau,
                        lr_q=c.lr_q, lr_pi=c.lr_pi, lr_alpha=c.lr_alpha, init_alpha=c.init_alpha,
                        entropy_ratio=c.entropy_ratio)

    def _agent_values(self, agent, obs, prev):
        return agent.preference_values(obs, prev)

    def _temperatures(self):
        return [a.alpha for a in self.agents]

    def _distributions(self, obs, prev):
        if self.cfg.share_weights:
            return self.agents[0].distribution(obs, prev)[0]
        return np.concatenate([a.distribution(obs[k:k + 1], prev[k:k + 1])[0] for k, a in enumerate(self.agents)])

    def act(self, env, obs, explore):
        prev = env.prev_action
        values = self._values(obs, prev)
        if explore:
            # start from a draw of each agent's own policy, then resolve the game
            pi = self._distributions(obs, prev)
            init = np.full(env.num_users, NO_SERVICE, dtype=np.int64)
            u = self.rng.random(env.num_users)
            for k in range(env.num_users):
                total = pi[k].sum()
                if total > 0:
                    init[k] = min(int(np.searchsorted(np.cumsum(pi[k]), u[k] * total, side="right")),
                                  pi.shape[1] - 1)
            temp = float(np.mean(self._temperatures()))
            res = nash_select(values, env.params.capacity, env.order, self.penalty, self.max_rounds,
                              init=init, temperature=temp, rng=self.rng)
        else:
            res = nash_select(values, env.params.capacity, env.order, self.penalty, self.max_rounds,
                              init=incumbent_start(values, prev))
            self.nonconverged += int(not res.converged)
        return res.actions


class NashDqnController(_DeepController):
    name = "nash-dqn"

    def _make_agent(self, num_sats, features, rng):
        c = self.cfg
        return DqnAgent(num_sats, features, rng, hidden=c.hidden, arch=c.arch, gamma=c.gamma, tau=c.tau,
                        lr=c.lr_q, double=c.double_q)

    def _agent_values(self, agent, obs, prev):
        return agent.values(obs, prev)

    def begin_episode(self, env, episode, explore):
        super().begin_episode(env, episode, explore)
        c = self.cfg
        frac = min(1.0, episode / max(1.0, c.eps_decay_fraction * self.episodes))
        self.eps = c.eps_start + (c.eps_end - c.eps_start) * frac

    def act(self, env, obs, explore):
        values = self._values(obs, env.prev_action)
        if explore:
            res = nash_select(values, env.params.capacity, env.order, self.penalty, self.max_rounds,
                              eps=self.eps, rng=self.rng)
        else:
            res = nash_select(values, env.params.capacity, env.order, self.penalty, self.max_rounds,
                              init=incumbent_start(values, env.prev_action))
            self.nonconverged += int(not res.converged)
        return res.actions


def make_controller(name: str, env: HandoverEnv, seed: int, episodes: int, deep: DeepConfig = None,
                    qcfg: QLearningConfig = None) -> Controller:
    if name in HEURISTICS:
        return HeuristicController(name)
    if name == "qlearning":
        return QLearningController(env.num_users, qcfg or QLearningConfig(), seed, episodes)
    features = FeatureSpec(env.params.capacity, env.geo.horizon, env.params.cinr_max)
    if name == "nash-sac":
        return NashSacController(env.num_users, env.num_sats, features, deep or DeepConfig(), seed, episodes)
    if name == "nash-dqn":
        return NashDqnController(env.num_users, env.num_sats, features, deep or DeepConfig(), seed, episodes)
    raise ValueError(f"unknown policy {name!r}")
