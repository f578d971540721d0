"""Downlink budget: free-space path loss, CNR, INR and CINR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import kernels

BOLTZMANN = 1.380649e-23

# G/T by user type index (aircraft, eVTOL, UAV, ground); 0.45 m dishes on
# aircraft/eVTOL, 0.3 m on UAVs, 0.54 m on ground terminals.
DEFAULT_GT_OVER_T = {1: 15.0, 2: 15.0, 3: 14.2, 4: 15.4}


@dataclass(frozen=True)
class LinkBudgetParams:
    carrier_frequency: float = 18.5  # GHz
    bandwidth: float = 250.0  # MHz
    eirp: float = 73.1  # dBm
    gt_over_T: dict = field(default_factory=lambda: dict(DEFAULT_GT_OVER_T))
    boltzmann: float = BOLTZMANN
    polarization_isolation: float = 12.0  # dB
    noise_temperature_range: tuple = (213.15, 273.15)
    perturb_gt: bool = True
    elevation_threshold: float = 15.0  # deg
    cinr_threshold: float = 0.0  # dB

    def __post_init__(self):
        for name in ("carrier_frequency", "bandwidth", "boltzmann"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        lo, hi = self.noise_temperature_range
        if not 0 < lo <= hi:
            raise ValueError("noise_temperature_range must satisfy 0 < lo <= hi")
        if set(self.gt_over_T) != {1, 2, 3, 4}:
            raise ValueError("gt_over_T must define all four user types")

    @property
    def eirp_dbw(self) -> float:
        return self.eirp - 30.0

    @property
    def bandwidth_hz(self) -> float:
        return self.bandwidth * 1e6


@dataclass(frozen=True)
class LinkSample:
    user_id: int
    sat_id: int
    fspl: float
    cnr: float
    inr: Optional[float]
    cinr: float


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=np.float64) / 10.0)


def linear_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=np.float64))


def fspl(distance: float, frequency: float) -> float:
    """Free-space path loss in dB for ``distance`` km at ``frequency`` GHz."""
    if distance <= 0 or frequency <= 0:
        raise ValueError("distance and frequency must be positive")
    return 20.0 * math.log10(distance) + 20.0 * math.log10(frequency) + 92.45


def cnr(distance: float, gt_over_T: float, params: LinkBudgetParams, covered: bool = True) -> Optional[float]:
    """Carrier-to-noise ratio (dB); ``None`` when the satellite does not cover the user."""
    if not covered:
        return None
    return (params.eirp_dbw + gt_over_T - 10.0 * math.log10(params.boltzmann)
            - 10.0 * math.log10(params.bandwidth_hz) - fspl(distance, params.carrier_frequency))


def inr(interferer_cnrs: Iterable[Optional[float]], params: LinkBudgetParams) -> Optional[float]:
    """Interference-to-noise ratio (dB) from the CNRs of covering, non-serving satellites.

    ``None`` entries (non-covering satellites) are skipped; an empty set
    returns ``None``, i.e. zero interference power.
    """
    iso = 10.0 ** (params.polarization_isolation / 10.0)
    terms = [10.0 ** (c / 10.0) / iso for c in interferer_cnrs if c is not None]
    if not terms:
        return None
    return 10.0 * math.log10(math.fsum(terms))


def cinr(cnr_db: Optional[float], inr_db: Optional[float]) -> Optional[float]:
    if cnr_db is None or cnr_db == -math.inf:
        return None
    if inr_db is None or inr_db == -math.inf:
        return cnr_db
    return cnr_db - 10.0 * math.log10(10.0 ** (inr_db / 10.0) + 1.0)


def link_sample(user_id: int, sat_id: int, distances: np.ndarray, covered: np.ndarray, gt_over_T: float,
                params: LinkBudgetParams) -> LinkSample:
    """Scalar-path budget of ``sat_id`` serving a user whose slant ranges to all satellites are given."""
    cnrs = [cnr(d, gt_over_T, params, bool(c)) for d, c in zip(distances, covered)]
    i = inr([c for n, c in enumerate(cnrs) if n != sat_id], params)
    return LinkSample(user_id, sat_id, fspl(distances[sat_id], params.carrier_frequency),
                      cnrs[sat_id], i, cinr(cnrs[sat_id], i))


def link_tables(dist_km: np.ndarray, covered: np.ndarray, gt_db: np.ndarray, params: LinkBudgetParams):
    """Vectorised (cnr, inr, cinr) for all users x candidate serving satellites; ``-inf`` marks no link."""
    return kernels.link_matrices(np.ascontiguousarray(dist_km, dtype=np.float64),
                                 np.ascontiguousarray(covered, dtype=np.bool_),
                                 np.ascontiguousarray(gt_db, dtype=np.float64),
                                 float(params.eirp_dbw), float(params.carrier_frequency),
                                 float(params.bandwidth_hz), float(params.boltzmann),
                                 float(params.polarization_isolation))
