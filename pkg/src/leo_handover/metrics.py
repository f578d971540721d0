"""Evaluation quantities computed from an episode trace.

Everything here is a pure function of a :class:`~leo_handover.env.Trace`, so
results can be recomputed offline from a dumped trace CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .env import Trace, blocking_rate
from .mobility import UserType

METRIC_COLUMNS = ("run_id", "policy", "seed", "L", "scenario", "total_handovers", "avg_handovers_per_user",
                  "blocking", "psi_total", "psi_aircraft", "psi_evtol", "psi_uav", "psi_ground")
CDF_COLUMNS = ("scenario", "user_type", "cinr_db", "cdf")


def _check(trace: Trace):
    if len(trace) == 0:
        raise ValueError("empty trace")


def handovers_per_user(trace: Trace) -> np.ndarray:
    _check(trace)
    return trace.array("handover").sum(axis=0).astype(np.int64)


def blocked_per_user(trace: Trace) -> np.ndarray:
    _check(trace)
    return trace.array("blocked").sum(axis=0).astype(np.int64)


def mean_normalized_cinr(trace: Trace, cinr_max: float = 30.0) -> np.ndarray:
    """Per-user mean of achieved CINR / cinr_max; sections without service contribute 0."""
    _check(trace)
    c = trace.array("cinr")
    return np.where(np.isnan(c), 0.0, c / cinr_max).mean(axis=0)


def user_utility(trace: Trace, w1: float, w2: float, w3: float, cinr_max: float = 30.0) -> np.ndarray:
    return (-w1 * handovers_per_user(trace) + w2 * mean_normalized_cinr(trace, cinr_max)
            - w3 * blocked_per_user(trace))


def network_utility(trace: Trace, w1: float, w2: float, w3: float, cinr_max: float = 30.0) -> float:
    return float(np.sum(user_utility(trace, w1, w2, w3, cinr_max)))


def utility_by_type(trace: Trace, w1, w2, w3, cinr_max: float = 30.0) -> dict:
    """Mean per-user utility within each user type (``nan`` for absent types)."""
    psi = user_utility(trace, w1, w2, w3, cinr_max)
    out = {}
    for t in UserType:
        sel = trace.user_types == int(t)
        out[t.label] = float(psi[sel].mean()) if sel.any() else float("nan")
    return out


def cumulative_avg_handovers(trace: Trace) -> np.ndarray:
    """Entry ``t`` = handovers by all users in sections ``0..t`` divided by K."""
    if len(trace) == 0:
        return np.zeros(0)
    ho = trace.array("handover")
    return np.cumsum(ho.sum(axis=1)) / trace.num_users


def cinr_samples(trace: Trace) -> dict:
    """Achieved CINR (dB) samples of served sections, per user-type label."""
    c = trace.array("cinr")
    out = {}
    for t in UserType:
        cols = trace.user_types == int(t)
        vals = c[:, cols].ravel()
        out[t.label] = vals[~np.isnan(vals)]
    return out


def cinr_cdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF: sorted values and ``i/n`` for i = 1..n."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    return x, np.arange(1, n + 1) / n if n else np.zeros(0)


@dataclass
class EpisodeMetrics:
    handovers: np.ndarray
    blocking: int
    psi: float
    psi_by_type: dict
    cinr_by_type: dict
    cumulative_handovers: np.ndarray
    user_types: np.ndarray = field(repr=False, default=None)

    @property
    def total_handovers(self) -> int:
        return int(self.handovers.sum())

    @property
    def avg_handovers(self) -> float:
        return float(self.handovers.mean()) if self.handovers.size else 0.0

    @classmethod
    def from_trace(cls, trace: Trace, capacity: int, w1: float, w2: float, w3: float,
                   cinr_max: float = 30.0) -> "EpisodeMetrics":
        return cls(handovers=handovers_per_user(trace), blocking=blocking_rate(trace, capacity),
                   psi=network_utility(trace, w1, w2, w3, cinr_max),
                   psi_by_type=utility_by_type(trace, w1, w2, w3, cinr_max),
                   cinr_by_type=cinr_samples(trace), cumulative_handovers=cumulative_avg_handovers(trace),
                   user_types=trace.user_types)

    def row(self, run_id: str, policy: str, seed: int, capacity: int, scenario: str) -> dict:
        r = {"run_id": run_id, "policy": policy, "seed": seed, "L": capacity, "scenario": scenario,
             "total_handovers": self.total_handovers, "avg_handovers_per_user": self.avg_handovers,
             "blocking": self.blocking, "psi_total": self.psi}
        for label, v in self.psi_by_type.items():
            r[f"psi_{label}"] = v
        return r


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{v:.12g}"
    return str(v)


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    ints = {"seed", "L", "total_handovers", "blocking"}
    text = {"run_id", "policy", "scenario"}
    with open(path, newline="") as fh:
        return [{k: (v if k in text else int(v) if k in ints else float(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]


def write_cdf_csv(scenario: str, cinr_by_type: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDF_COLUMNS)
        for label, samples in cinr_by_type.items():
            x, p = cinr_cdf(samples)
            for xi, pi in zip(x, p):
                w.writerow([scenario, label, f"{xi:.12g}", f"{pi:.12g}"])


def read_cdf_csv(path) -> dict:
    """``{(scenario, user_type): samples}``; the CDF column is implied by the sort order."""
    out: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault((r["scenario"], r["user_type"]), []).append(float(r["cinr_db"]))
    return {k: np.array(v) for k, v in out.items()}


def relative_improvement(a: float, b: float) -> float:
    """``(a - b) / |b|``: how much better ``a`` is than ``b`` for a higher-is-better metric."""
    if b == 0:
        return float("inf") if a > 0 else (0.0 if a == 0 else float("-inf"))
    return (a - b) / abs(b)


def relative_reduction(a: float, b: float) -> float:
    """``(b - a) / b``: fractional reduction of a lower-is-better count."""
    if b == 0:
        return 0.0 if a == 0 else float("-inf")
    return (b - a) / b
