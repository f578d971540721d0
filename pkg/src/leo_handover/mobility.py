"""User population: four user types, spawning around Stockholm, great-circle motion."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .orbits import EARTH_RADIUS_KM, GeodeticPoint
from .seeding import stream


class UserType(enum.IntEnum):
    """Index follows the link-budget convention: 1 aircraft ... 4 ground."""

    AIRCRAFT = 1
    EVTOL = 2
    UAV = 3
    GROUND = 4

    @property
    def is_flying(self) -> bool:
        return self is not UserType.GROUND

    @property
    def label(self) -> str:
        return self.name.lower()


DEFAULT_SPEED_KMH = {UserType.AIRCRAFT: 900.0, UserType.EVTOL: 240.0, UserType.UAV: 80.0, UserType.GROUND: 0.0}
DEFAULT_ALTITUDE_KM = {UserType.AIRCRAFT: 10.0, UserType.EVTOL: 1.0, UserType.UAV: 0.15, UserType.GROUND: 0.0}

# (lat_min, lat_max, lon_min, lon_max)
SMALL_BOX = (59.25, 59.33, 17.91, 18.06)
LARGE_BOX = (59.25, 59.65, 17.91, 18.20)

DESTINATIONS = {
    "helsinki": (GeodeticPoint(60.17, 24.94), 0.2),
    "kiruna": (GeodeticPoint(67.86, 20.23), 0.2),
    "copenhagen": (GeodeticPoint(55.68, 12.57), 0.3),
    "oslo": (GeodeticPoint(59.91, 10.75), 0.3),
}


@dataclass(frozen=True)
class UserState:
    user_id: int
    type: UserType
    position: GeodeticPoint
    speed: float  # km/h
    destination: Optional[GeodeticPoint] = None
    destination_name: str = ""
    gt_over_T: float = 15.4  # dB/K
    noise_temperature: float = 290.0  # K

    @property
    def priority_class(self) -> str:
        return "fv" if self.type.is_flying else "ground"


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Split ``n`` into integer parts proportional to ``fractions``."""
    total = float(sum(fractions))
    quotas = [n * f / total for f in fractions]
    parts = [int(math.floor(q)) for q in quotas]
    rest = n - sum(parts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - parts[i]), i))
    for i in order[:rest]:
        parts[i] += 1
    return parts


def _normalize_counts(counts) -> dict[UserType, int]:
    if isinstance(counts, Mapping):
        out = {UserType[k.upper()] if isinstance(k, str) else UserType(k): int(v) for k, v in counts.items()}
    else:
        if len(counts) != 4:
            raise ValueError("counts must list aircraft, evtol, uav, ground")
        out = dict(zip(UserType, (int(c) for c in counts)))
    for t in UserType:
        out.setdefault(t, 0)
        if out[t] < 0:
            raise ValueError(f"negative count for {t.label}")
    return out


def spawn_users(seed: int, counts, *, small_box=SMALL_BOX, large_box=LARGE_BOX,
                destinations: Mapping[str, tuple] = None, speeds: Mapping = None,
                altitudes: Mapping = None, gt_over_T: Mapping = None,
                noise_temperature_range=(213.15, 273.15), perturb_gt: bool = True) -> list[UserState]:
    """Place the population; ground terminals take the lowest user ids.

    Each (type, index-within-type) draws from its own random stream, so adding
    users of one type leaves every other user untouched.
    """
    counts = _normalize_counts(counts)
    destinations = DESTINATIONS if destinations is None else destinations
    speeds = {**DEFAULT_SPEED_KMH, **(speeds or {})}
    altitudes = {**DEFAULT_ALTITUDE_KM, **(altitudes or {})}
    from .link import DEFAULT_GT_OVER_T
    gts = {**DEFAULT_GT_OVER_T, **(gt_over_T or {})}
    names = list(destinations)
    fracs = [destinations[n][1] for n in names]

    users = []
    for utype in (UserType.GROUND, UserType.AIRCRAFT, UserType.EVTOL, UserType.UAV):
        n = counts[utype]
        dests = [None] * n
        if utype.is_flying and n:
            parts = largest_remainder(n, fracs)
            labels = [name for name, p in zip(names, parts) for _ in range(p)]
            perm = stream(seed, "destinations", utype.label).permutation(n)
            dests = [labels[i] for i in perm]
        box = large_box if utype in (UserType.AIRCRAFT, UserType.EVTOL) else small_box
        for i in range(n):
            rng = stream(seed, "user", utype.label, i)
            lat = rng.uniform(box[0], box[1])
            lon = rng.uniform(box[2], box[3])
            t_noise = rng.uniform(*noise_temperature_range)
            gt = gts[utype] + (10.0 * math.log10(290.0 / t_noise) if perturb_gt else 0.0)
            name = dests[i]
            users.append(UserState(
                user_id=len(users), type=utype,
                position=GeodeticPoint(lat, lon, altitudes[utype]),
                speed=speeds[utype],
                destination=None if name is None else GeodeticPoint(
                    destinations[name][0].latitude, destinations[name][0].longitude, altitudes[utype]),
                destination_name=name or "",
                gt_over_T=gt, noise_temperature=t_noise))
    return users


def great_circle_km(a: GeodeticPoint, b: GeodeticPoint) -> float:
    """Haversine ground-track distance."""
    p1, p2 = math.radians(a.latitude), math.radians(b.latitude)
    dl = math.radians(b.longitude - a.longitude)
    h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _unit(p: GeodeticPoint) -> np.ndarray:
    la, lo = math.radians(p.latitude), math.radians(p.longitude)
    return np.array([math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la)])


def advance(user: UserState, dt: float) -> UserState:
    """Move ``speed * dt`` along the great circle to the destination, clamping on arrival."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if user.speed <= 0.0 or user.destination is None:
        return user
    step = user.speed * dt / 3600.0
    remaining = great_circle_km(user.position, user.destination)
    if step >= remaining:
        return replace(user, position=user.destination)
    a, b = _unit(user.position), _unit(user.destination)
    omega = remaining / EARTH_RADIUS_KM
    frac = step / EARTH_RADIUS_KM
    # slerp by arc length
    tangent = b - a * math.cos(omega)
    tangent /= np.linalg.norm(tangent)
    p = a * math.cos(frac) + tangent * math.sin(frac)
    lat = math.degrees(math.asin(max(-1.0, min(1.0, p[2]))))
    lon = math.degrees(math.atan2(p[1], p[0]))
    return replace(user, position=GeodeticPoint(lat, lon, user.position.altitude))


def trajectory(user: UserState, dt: float, steps: int) -> list[GeodeticPoint]:
    """Positions at 0, dt, ..., steps*dt."""
    out = [user.position]
    for _ in range(steps):
        user = advance(user, dt)
        out.append(user.position)
    return out
