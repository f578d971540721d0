"""Multi-agent handover environment.

Geometry and link tables for a whole episode are precomputed once (user
motion does not depend on the agents' choices); :class:`HandoverEnv` then
only has to apply joint actions, enforce channel capacity and score rewards.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .link import LinkBudgetParams, link_tables
from .mobility import UserState, UserType, trajectory
from .orbits import ConstellationArrays, geodetic_to_ecef

NO_SERVICE = -1

CASE_UNCOVERED = 1
CASE_UNRELIABLE = 2
CASE_STAY = 3
CASE_HANDOVER = 4


@dataclass(frozen=True)
class RewardParams:
    beta: float = 1.0
    w1: float = 1.0 / 3.0
    w2: float = 1.0 / 3.0
    w3: float = 1.0 / 3.0
    capacity: int = 8
    cinr_threshold: float = 0.0
    cinr_max: float = 30.0
    normalize: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not all(np.isfinite([self.w1, self.w2, self.w3])):
            raise ValueError("reward weights must be finite")
        if self.capacity < 1:
            raise ValueError("capacity L must be >= 1")
        if self.cinr_max <= 0:
            raise ValueError("cinr_max must be > 0")


@dataclass(frozen=True)
class AgentObservation:
    """Per-agent state: one column per satellite."""

    coverage: np.ndarray
    occupancy: np.ndarray
    cinr: np.ndarray
    remaining: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.stack([self.coverage, self.occupancy, self.cinr, self.remaining])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "AgentObservation":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[0], m[1], m[2], m[3])


@dataclass
class EpisodeGeometry:
    """Everything the environment needs, sampled at the U+1 section boundaries."""

    covered: np.ndarray  # [U+1, K, N] bool
    cinr: np.ndarray  # [U+1, K, N] dB, -inf without coverage
    remaining: np.ndarray  # [U+1, K, N] s
    user_types: np.ndarray  # [K] UserType values
    dt: float
    cnr: Optional[np.ndarray] = None
    inr: Optional[np.ndarray] = None
    fspl: Optional[np.ndarray] = None

    @property
    def sections(self) -> int:
        return self.covered.shape[0] - 1

    @property
    def num_users(self) -> int:
        return self.covered.shape[1]

    @property
    def num_sats(self) -> int:
        return self.covered.shape[2]

    @property
    def horizon(self) -> float:
        return self.sections * self.dt

    def write_link_trace(self, fh) -> None:
        """Covered (section, user, satellite) link samples; empty ``inr_db`` when nothing interferes."""
        if self.cnr is None:
            raise ValueError("geometry was built without link tables")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "user_id", "sat_id", "fspl_db", "cnr_db", "inr_db", "cinr_db"))
        for t, k, n in zip(*np.nonzero(self.covered)):
            i = self.inr[t, k, n]
            w.writerow([f"{t * self.dt:g}", k, n, f"{self.fspl[t, k, n]:.12g}", f"{self.cnr[t, k, n]:.12g}",
                        "" if np.isneginf(i) else f"{i:.12g}", f"{self.cinr[t, k, n]:.12g}"])


def build_geometry(constellation: ConstellationArrays, users: Sequence[UserState], link: LinkBudgetParams,
                   dt: float, sections: int, start_time: float = 0.0) -> EpisodeGeometry:
    K, N = len(users), len(constellation)
    T = sections + 1
    routes = [trajectory(u, dt, sections) for u in users]
    covered = np.zeros((T, K, N), dtype=bool)
    cinr = np.empty((T, K, N))
    cnr = np.empty((T, K, N))
    inr = np.empty((T, K, N))
    fspl = np.empty((T, K, N))
    gt = np.array([u.gt_over_T for u in users], dtype=np.float64)
    for t in range(T):
        pts = [r[t] for r in routes]
        users_ecef = geodetic_to_ecef(np.array([p.latitude for p in pts]), np.array([p.longitude for p in pts]),
                                      np.array([p.altitude for p in pts]))
        sats_ecef = constellation.positions_ecef(start_time + t * dt)
        elev = kernels.elevation_matrix(np.ascontiguousarray(users_ecef), np.ascontiguousarray(sats_ecef))
        dist = kernels.slant_range_np(users_ecef, sats_ecef)
        covered[t] = elev >= link.elevation_threshold
        cnr[t], inr[t], cinr[t] = link_tables(dist, covered[t], gt, link)
        fspl[t] = 20.0 * np.log10(dist) + 20.0 * np.log10(link.carrier_frequency) + 92.45
    remaining = kernels.visible_runs(covered, float(dt))
    types = np.array([int(u.type) for u in users], dtype=np.int64)
    return EpisodeGeometry(covered, cinr, remaining, types, float(dt), cnr, inr, fspl)


@dataclass
class StepResult:
    reward: np.ndarray
    case: np.ndarray
    handover: np.ndarray
    blocked: np.ndarray
    cinr: np.ndarray  # achieved dB, nan when not served
    load: np.ndarray  # per-satellite association count
    observations: np.ndarray
    done: bool


class Trace:
    """Per-(section, user) record of an episode in deterministic (t, user_id) order."""

    columns = ("t", "user_id", "user_type", "sat_id", "reward", "case_id", "handover", "blocked", "cinr_db")

    def __init__(self, user_types: np.ndarray, dt: float, num_sats: int):
        self.user_types = np.asarray(user_types, dtype=np.int64)
        self.dt = float(dt)
        self.num_sats = int(num_sats)
        self.sat: list[np.ndarray] = []
        self.reward: list[np.ndarray] = []
        self.case: list[np.ndarray] = []
        self.handover: list[np.ndarray] = []
        self.blocked: list[np.ndarray] = []
        self.cinr: list[np.ndarray] = []

    def append(self, actions, res: StepResult) -> None:
        self.sat.append(np.asarray(actions, dtype=np.int64).copy())
        self.reward.append(res.reward.copy())
        self.case.append(res.case.copy())
        self.handover.append(res.handover.copy())
        self.blocked.append(res.blocked.copy())
        self.cinr.append(res.cinr.copy())

    def __len__(self):
        return len(self.sat)

    @property
    def num_users(self) -> int:
        return self.user_types.size

    def array(self, name: str) -> np.ndarray:
        rows = getattr(self, name)
        if not rows:
            return np.zeros((0, self.num_users))
        return np.stack(rows)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.columns)
        for u in range(len(self)):
            t = u * self.dt
            for k in range(self.num_users):
                c = self.cinr[u][k]
                w.writerow([f"{t:g}", k, UserType(self.user_types[k]).label, self.sat[u][k],
                            f"{self.reward[u][k]:.12g}", self.case[u][k], self.handover[u][k],
                            self.blocked[u][k], "" if np.isnan(c) else f"{c:.12g}"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, fh, num_sats: int, dt: Optional[float] = None) -> "Trace":
        rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError("empty trace")
        times = sorted({float(r["t"]) for r in rows})
        K = max(int(r["user_id"]) for r in rows) + 1
        types = np.zeros(K, dtype=np.int64)
        for r in rows:
            types[int(r["user_id"])] = int(UserType[r["user_type"].upper()])
        if dt is None:
            dt = times[1] - times[0] if len(times) > 1 else 1.0
        tr = cls(types, dt, num_sats)
        index = {t: i for i, t in enumerate(times)}
        U = len(times)
        sat = np.zeros((U, K), dtype=np.int64)
        reward = np.zeros((U, K))
        case = np.zeros((U, K), dtype=np.int64)
        ho = np.zeros((U, K), dtype=np.int64)
        bl = np.zeros((U, K), dtype=np.int64)
        ci = np.full((U, K), np.nan)
        for r in rows:
            u, k = index[float(r["t"])], int(r["user_id"])
            sat[u, k] = int(r["sat_id"])
            reward[u, k] = float(r["reward"])
            case[u, k] = int(r["case_id"])
            ho[u, k] = int(r["handover"])
            bl[u, k] = int(r["blocked"])
            ci[u, k] = float(r["cinr_db"]) if r["cinr_db"] != "" else np.nan
        for u in range(U):
            tr.sat.append(sat[u])
            tr.reward.append(reward[u])
            tr.case.append(case[u])
            tr.handover.append(ho[u])
            tr.blocked.append(bl[u])
            tr.cinr.append(ci[u])
        return tr


def section_loads(actions: np.ndarray, num_sats: int) -> np.ndarray:
    a = np.asarray(actions)
    return np.bincount(a[a >= 0], minlength=num_sats)


def blocking_rate(trace: Trace, capacity: int) -> int:
    """Total over-capacity excess summed over sections and satellites."""
    sat = trace.array("sat").astype(np.int64)
    total = 0
    for row in sat:
        load = section_loads(row, trace.num_sats)
        total += int(np.maximum(0, load - capacity).sum())
    return total


def priority_order(user_types: np.ndarray, fv_priority: bool) -> np.ndarray:
    """Admission / best-response order: FVs first under priority, then by user id."""
    ids = np.arange(len(user_types))
    if not fv_priority:
        return ids
    ground = (np.asarray(user_types) == int(UserType.GROUND)).astype(int)
    return np.lexsort((ids, ground))


class HandoverEnv:
    """Section-stepped environment over a precomputed :class:`EpisodeGeometry`."""

    def __init__(self, geometry: EpisodeGeometry, reward: RewardParams, fv_priority: bool = False):
        self.geo = geometry
        self.params = reward
        self.fv_priority = bool(fv_priority)
        self.order = priority_order(geometry.user_types, self.fv_priority)
        self.reset()

    # -- bookkeeping -------------------------------------------------------
    @property
    def num_users(self) -> int:
        return self.geo.num_users

    @property
    def num_sats(self) -> int:
        return self.geo.num_sats

    @property
    def sections(self) -> int:
        return self.geo.sections

    @property
    def done(self) -> bool:
        return self.section >= self.sections

    @property
    def time(self) -> float:
        return self.section * self.geo.dt

    def reset(self) -> np.ndarray:
        self.section = 0
        self.prev_load = np.zeros(self.num_sats, dtype=np.int64)
        self.prev_action = np.full(self.num_users, NO_SERVICE, dtype=np.int64)
        self.anchor = np.full(self.num_users, NO_SERVICE, dtype=np.int64)
        self.handovers = np.zeros(self.num_users, dtype=np.int64)
        self.blocking = 0
        self.trace = Trace(self.geo.user_types, self.geo.dt, self.num_sats)
        return self.observe_all()

    # -- observations ------------------------------------------------------
    def observe_all(self) -> np.ndarray:
        """``[K, 4, N]`` stack of agent observations at the current section."""
        u = min(self.section, self.sections)
        K, N = self.num_users, self.num_sats
        obs = np.empty((K, 4, N))
        obs[:, 0] = self.geo.covered[u]
        obs[:, 1] = self.prev_load[None, :]
        obs[:, 2] = self.geo.cinr[u]
        obs[:, 3] = self.geo.remaining[u]
        return obs

    def observe(self, k: int) -> AgentObservation:
        return AgentObservation.from_matrix(self.observe_all()[k])

    # -- dynamics ----------------------------------------------------------
    def _value(self, rho, cinr, occupancy):
        p = self.params
        idle = p.capacity - occupancy
        if p.normalize:
            rho = rho / self.geo.horizon
            cinr = cinr / p.cinr_max
            idle = idle / p.capacity
        return rho * p.w1 + cinr * p.w2 + idle * p.w3

    def admitted(self, actions: np.ndarray) -> np.ndarray:
        """Capacity rule: the first L users per satellite in priority order are admitted."""
        ok = np.ones(self.num_users, dtype=bool)
        count = np.zeros(self.num_sats, dtype=np.int64)
        for k in self.order:
            a = actions[k]
            if a < 0:
                continue
            count[a] += 1
            if count[a] > self.params.capacity:
                ok[k] = False
        return ok

    def step(self, actions) -> StepResult:
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        actions = np.asarray(actions)
        if actions.shape != (self.num_users,) or not np.issubdtype(actions.dtype, np.integer):
            raise ValueError(f"joint action must be {self.num_users} integers")
        if np.any((actions < NO_SERVICE) | (actions >= self.num_sats)):
            raise ValueError("action index out of range")
        actions = actions.astype(np.int64)

        u = self.section
        p = self.params
        K = self.num_users
        load = section_loads(actions, self.num_sats)
        ok = self.admitted(actions)
        reward = np.zeros(K)
        case = np.zeros(K, dtype=np.int64)
        handover = np.zeros(K, dtype=np.int64)
        blocked = np.zeros(K, dtype=np.int64)
        achieved = np.full(K, np.nan)
        for k in range(K):
            a = actions[k]
            if a < 0 or not self.geo.covered[u, k, a]:
                reward[k] = -5.0 * p.beta
                case[k] = CASE_UNCOVERED
                continue
            theta = self.geo.cinr[u, k, a]
            if not ok[k] or theta < p.cinr_threshold:
                reward[k] = -p.beta
                case[k] = CASE_UNRELIABLE
                blocked[k] = int(not ok[k])
                if ok[k]:
                    achieved[k] = theta
                continue
            value = self._value(self.geo.remaining[u, k, a], theta, self.prev_load[a])
            achieved[k] = theta
            if self.anchor[k] == NO_SERVICE or self.anchor[k] == a:
                reward[k] = value
                case[k] = CASE_STAY
            else:
                reward[k] = value - 0.5 * p.beta
                case[k] = CASE_HANDOVER
                handover[k] = 1
            self.anchor[k] = a

        self.handovers += handover
        self.blocking += int(np.maximum(0, load - p.capacity).sum())
        self.prev_load = load
        self.prev_action = actions.copy()
        self.section += 1
        res = StepResult(reward, case, handover, blocked, achieved, load, self.observe_all(), self.done)
        self.trace.append(actions, res)
        return res
