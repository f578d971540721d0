"""Walker constellations, circular two-body propagation and ground geometry."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels

EARTH_RADIUS_KM = 6371.0
MU_EARTH = 398600.4418  # km^3/s^2
EARTH_ROTATION_RATE = 7.2921159e-5  # rad/s


@dataclass(frozen=True)
class ConstellationSpec:
    num_planes: int = 12
    sats_per_plane: int = 49
    altitude: float = 1200.0
    inclination: float = 87.9
    raan_spread: float = 180.0
    phase_offset: float = 0.0
    raan_origin: float = 0.0

    def __post_init__(self):
        if self.num_planes < 1 or self.sats_per_plane < 1:
            raise ValueError("num_planes and sats_per_plane must be >= 1")
        if not 100.0 <= self.altitude <= 2000.0:
            raise ValueError(f"altitude {self.altitude} km outside the LEO band [100, 2000]")

    @property
    def total(self) -> int:
        return self.num_planes * self.sats_per_plane


@dataclass(frozen=True)
class GeodeticPoint:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of range")
        if self.altitude < 0.0:
            raise ValueError("altitude must be >= 0")

    def ecef(self) -> np.ndarray:
        return geodetic_to_ecef(self.latitude, self.longitude, self.altitude)


@dataclass(frozen=True)
class SatelliteState:
    """One satellite on a circular orbit.

    ``position_eci`` is inertial; the inertial frame coincides with the
    Earth-fixed frame at scenario time 0, so ``position_ecef`` rotates it back
    by the Earth's spin accumulated up to ``epoch_time``.
    """

    sat_id: int
    plane: int
    raan: float  # deg
    anomaly: float  # deg, argument of latitude at epoch_time
    inclination: float  # deg
    altitude: float  # km
    epoch_time: float = 0.0
    position_eci: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.position_eci is None:
            object.__setattr__(self, "position_eci", _orbit_position(
                self.semi_major_axis, self.raan, self.anomaly, self.inclination))

    @property
    def semi_major_axis(self) -> float:
        return EARTH_RADIUS_KM + self.altitude

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.semi_major_axis ** 3)

    @property
    def period(self) -> float:
        return orbital_period(self.altitude)

    @property
    def position_ecef(self) -> np.ndarray:
        return eci_to_ecef(self.position_eci, self.epoch_time)


def orbital_period(altitude_km: float) -> float:
    a = EARTH_RADIUS_KM + altitude_km
    return 2.0 * math.pi * math.sqrt(a ** 3 / MU_EARTH)


def _orbit_position(radius, raan_deg, u_deg, inc_deg):
    raan, u, inc = np.radians(raan_deg), np.radians(u_deg), np.radians(inc_deg)
    cu, su = np.cos(u), np.sin(u)
    co, so = np.cos(raan), np.sin(raan)
    ci, si = np.cos(inc), np.sin(inc)
    x = co * cu - so * su * ci
    y = so * cu + co * su * ci
    z = su * si
    return np.stack([x, y, z], axis=-1) * np.asarray(radius, dtype=np.float64)[..., None]


def geodetic_to_ecef(lat_deg, lon_deg, alt_km=0.0) -> np.ndarray:
    """Spherical-Earth conversion; broadcasts over array inputs."""
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    r = EARTH_RADIUS_KM + np.asarray(alt_km, dtype=np.float64)
    return np.stack([r * np.cos(lat) * np.cos(lon), r * np.cos(lat) * np.sin(lon), r * np.sin(lat)], axis=-1)


def eci_to_ecef(pos, t):
    th = EARTH_ROTATION_RATE * t
    c, s = math.cos(th), math.sin(th)
    pos = np.asarray(pos, dtype=np.float64)
    return np.stack([c * pos[..., 0] + s * pos[..., 1], -s * pos[..., 0] + c * pos[..., 1], pos[..., 2]], axis=-1)


def generate_walker(spec: ConstellationSpec) -> list[SatelliteState]:
    """Satellites at t=0, planes spread evenly over ``raan_spread``."""
    sats = []
    spacing = 360.0 / spec.sats_per_plane
    for p in range(spec.num_planes):
        raan = (spec.raan_origin + p * spec.raan_spread / spec.num_planes) % 360.0
        for s in range(spec.sats_per_plane):
            anomaly = (s * spacing + p * spec.phase_offset * spacing) % 360.0
            sats.append(SatelliteState(len(sats), p, raan, anomaly, spec.inclination, spec.altitude))
    return sats


def propagate(sat: SatelliteState, t: float) -> SatelliteState:
    """Advance ``sat`` by ``t`` seconds along its circular orbit."""
    if t < 0:
        raise ValueError("t must be >= 0")
    du = math.degrees(sat.mean_motion * t)
    return replace(sat, anomaly=(sat.anomaly + du) % 360.0, epoch_time=sat.epoch_time + t, position_eci=None)


def elevation_angle(user: GeodeticPoint, sat: SatelliteState) -> float:
    r_u = user.ecef()
    los = sat.position_ecef - r_u
    s = float(np.dot(los, r_u) / (np.linalg.norm(los) * np.linalg.norm(r_u)))
    return math.degrees(math.asin(max(-1.0, min(1.0, s))))


def is_covered(user: GeodeticPoint, sat: SatelliteState, threshold: float = 15.0) -> int:
    return int(elevation_angle(user, sat) >= threshold)


def remaining_visible_time(user_route: Callable[[float], GeodeticPoint], sat: SatelliteState, t: float,
                           threshold: float, dt: float, horizon: float) -> float:
    """Forward scan at section granularity, stopping at ``horizon`` (absolute time).

    ``sat`` may carry any epoch; it is propagated to each sample time.
    """
    def covered_at(tt):
        return is_covered(user_route(tt), propagate(sat, tt - sat.epoch_time), threshold)

    if not covered_at(t):
        return 0.0
    m = 0
    while t + (m + 1) * dt <= horizon + 1e-9 and covered_at(t + (m + 1) * dt):
        m += 1
    return m * dt


# ---------------------------------------------------------------------------
# Vectorised helpers used by the environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstellationArrays:
    """Column-wise orbital elements of a whole constellation."""

    raan: np.ndarray
    anomaly: np.ndarray
    inclination: np.ndarray
    altitude: np.ndarray

    @classmethod
    def from_states(cls, sats: Sequence[SatelliteState]) -> "ConstellationArrays":
        if any(s.epoch_time != sats[0].epoch_time for s in sats):
            raise ValueError("satellites must share one epoch")
        return cls(np.array([s.raan for s in sats], dtype=np.float64),
                   np.array([s.anomaly for s in sats], dtype=np.float64),
                   np.array([s.inclination for s in sats], dtype=np.float64),
                   np.array([s.altitude for s in sats], dtype=np.float64))

    def __len__(self):
        return self.raan.size

    def positions_ecef(self, t: float) -> np.ndarray:
        a = EARTH_RADIUS_KM + self.altitude
        n = np.sqrt(MU_EARTH / a ** 3)
        u = self.anomaly + np.degrees(n * t)
        return eci_to_ecef(_orbit_position(a, self.raan, u, self.inclination), t)


def elevation_table(users_ecef: np.ndarray, sats_ecef: np.ndarray) -> np.ndarray:
    return kernels.elevation_matrix(np.ascontiguousarray(users_ecef, dtype=np.float64),
                                    np.ascontiguousarray(sats_ecef, dtype=np.float64))


def load_elements_file(path) -> list[SatelliteState]:
    """Read ``sat_id, plane, raan_deg, anomaly_deg, altitude_km, inclination_deg`` rows."""
    sats = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip() == "sat_id":
                continue
            if len(row) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                sid, plane = int(row[0]), int(row[1])
                raan, anomaly, alt, inc = (float(x) for x in row[2:])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            sats.append(SatelliteState(sid, plane, raan, anomaly, inc, alt))
    ids = [s.sat_id for s in sats]
    if ids != list(range(len(ids))):
        raise ValueError(f"{path}: sat_id must run 0..N-1 in file order")
    return sats


def write_elements_file(path, sats: Sequence[SatelliteState]) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sat_id", "plane", "raan_deg", "anomaly_deg", "altitude_km", "inclination_deg"])
        for s in sats:
            w.writerow([s.sat_id, s.plane, repr(s.raan), repr(s.anomaly), repr(s.altitude), repr(s.inclination)])
