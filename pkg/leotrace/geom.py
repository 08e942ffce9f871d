"""Orbital geometry: satellite and ground-station positions, visibility, delays.

Satellites follow circular Walker-delta orbits around a spherical Earth. The
ground rotates underneath in the inertial frame at the sidereal rate.
Angles are degrees at the API boundary and radians inside.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from leotrace.errors import ConfigError, GeometryError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371.0e3
EARTH_MU_M3_S2 = 398600.4418e9
EARTH_ROTATION_RAD_S = 7.2921159e-5
SPEED_OF_LIGHT_M_S = 299_792_458.0

# Published shell geometries; rates and queues default to the evaluation settings.
PRESETS: dict[str, dict[str, float | int]] = {
    "kuiper": {
        "altitude_km": 630.0,
        "num_orbits": 34,
        "sats_per_orbit": 34,
        "inclination_deg": 51.9,
        "min_elevation_deg": 30.0,
    },
    "starlink": {
        "altitude_km": 550.0,
        "num_orbits": 72,
        "sats_per_orbit": 22,
        "inclination_deg": 53.0,
        "min_elevation_deg": 25.0,
    },
    "telesat": {
        "altitude_km": 1015.0,
        "num_orbits": 27,
        "sats_per_orbit": 13,
        "inclination_deg": 98.98,
        "min_elevation_deg": 10.0,
    },
}


class Position3(NamedTuple):
    """Earth-centered inertial position in meters."""

    x: float
    y: float
    z: float


class ConstellationSpec(BaseModel):
    """Walker-delta shell plus link and queue configuration."""

    model_config = ConfigDict(frozen=True)

    altitude_km: float = Field(..., gt=0)
    num_orbits: int = Field(..., ge=1)
    sats_per_orbit: int = Field(..., ge=1)
    inclination_deg: float = Field(..., gt=0, le=180)
    phase_factor: int = Field(default=0, ge=0)
    min_elevation_deg: float = Field(default=25.0, ge=0, lt=90)
    isl_rate_bps: float = Field(default=50e6, gt=0)
    gsl_rate_bps: float = Field(default=50e6, gt=0)
    isl_queue_pkts: int = Field(default=200, gt=0)
    gsl_queue_pkts: int = Field(default=200, gt=0)

    @model_validator(mode="after")
    def _check_phase(self) -> "ConstellationSpec":
        if self.phase_factor >= self.num_orbits:
            raise ValueError(
                f"phase_factor must be < num_orbits ({self.phase_factor} >= {self.num_orbits})"
            )
        return self

    @classmethod
    def preset(cls, name: str, **overrides: float | int) -> "ConstellationSpec":
        """Build one of the preset shells ("kuiper", "starlink", "telesat")."""
        try:
            base = dict(PRESETS[name.lower()])
        except KeyError:
            raise ConfigError(f"Unknown constellation preset: {name}") from None
        base.update(overrides)
        return cls(**base)

    @property
    def num_satellites(self) -> int:
        return self.num_orbits * self.sats_per_orbit

    @property
    def semi_major_axis_m(self) -> float:
        return EARTH_RADIUS_M + self.altitude_km * 1000.0

    @property
    def period_s(self) -> float:
        return orbital_period(self)


class GroundStation(BaseModel):
    """A fixed terrestrial endpoint."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    name: str
    latitude_deg: float = Field(..., ge=-90, le=90)
    longitude_deg: float = Field(..., ge=-180, le=180)
    altitude_m: float = 0.0


def orbital_period(spec: ConstellationSpec) -> float:
    """Kepler period of the shell, T = 2*pi*sqrt(a^3/mu)."""
    a = spec.semi_major_axis_m
    return 2.0 * math.pi * math.sqrt(a**3 / EARTH_MU_M3_S2)


def _anomaly_rad(spec: ConstellationSpec, orbit: int | np.ndarray, slot: int | np.ndarray, t: float):
    o, s = spec.num_orbits, spec.sats_per_orbit
    deg = (
        slot * 360.0 / s
        + orbit * spec.phase_factor * 360.0 / (o * s)
        + 360.0 * (t / orbital_period(spec))
    )
    return np.deg2rad(np.mod(deg, 360.0))


def satellite_position(spec: ConstellationSpec, orbit: int, slot: int, t: float) -> Position3:
    """Position of satellite (orbit, slot) at time t.

    Raises:
        IndexError: orbit or slot outside the shell.
    """
    if not 0 <= orbit < spec.num_orbits:
        raise IndexError(f"orbit {orbit} out of range [0, {spec.num_orbits})")
    if not 0 <= slot < spec.sats_per_orbit:
        raise IndexError(f"slot {slot} out of range [0, {spec.sats_per_orbit})")
    x, y, z = _orbit_to_inertial(spec, np.array([orbit]), np.array([slot]), t)[0]
    return Position3(float(x), float(y), float(z))


def satellite_positions(spec: ConstellationSpec, t: float) -> np.ndarray:
    """Positions of all satellites at time t, orbit-major, shape (O*S, 3)."""
    orbits = np.repeat(np.arange(spec.num_orbits), spec.sats_per_orbit)
    slots = np.tile(np.arange(spec.sats_per_orbit), spec.num_orbits)
    return _orbit_to_inertial(spec, orbits, slots, t)


def _orbit_to_inertial(spec: ConstellationSpec, orbits: np.ndarray, slots: np.ndarray, t: float) -> np.ndarray:
    a = spec.semi_major_axis_m
    u = _anomaly_rad(spec, orbits, slots, t)
    raan = np.deg2rad(orbits * 360.0 / spec.num_orbits)
    inc = math.radians(spec.inclination_deg)

    # in-plane, then inclination about x, then RAAN about z
    px = a * np.cos(u)
    py = a * np.sin(u) * math.cos(inc)
    pz = a * np.sin(u) * math.sin(inc)
    cos_r, sin_r = np.cos(raan), np.sin(raan)
    return np.column_stack((px * cos_r - py * sin_r, px * sin_r + py * cos_r, pz))


def ground_station_position(gs: GroundStation, t: float) -> Position3:
    """Inertial position of a ground station, Earth rotated by omega_E * t."""
    x, y, z = ground_station_positions([gs], t)[0]
    return Position3(float(x), float(y), float(z))


def ground_station_positions(stations: Iterable[GroundStation], t: float) -> np.ndarray:
    """Inertial positions of several stations at time t, shape (G, 3)."""
    stations = list(stations)
    if not stations:
        return np.zeros((0, 3))
    lat = np.deg2rad([gs.latitude_deg for gs in stations])
    lon = np.deg2rad([gs.longitude_deg for gs in stations])
    r = EARTH_RADIUS_M + np.array([gs.altitude_m for gs in stations])
    theta = lon + EARTH_ROTATION_RAD_S * t
    return np.column_stack((
        r * np.cos(lat) * np.cos(theta),
        r * np.cos(lat) * np.sin(theta),
        r * np.sin(lat),
    ))


def elevation_deg(gs_pos: Position3 | np.ndarray, sat_pos: Position3 | np.ndarray) -> float:
    """Elevation of sat_pos above the local horizon of gs_pos (may be negative)."""
    gs = np.asarray(gs_pos, dtype=float)
    sat = np.asarray(sat_pos, dtype=float)
    gs_norm = float(np.linalg.norm(gs))
    if gs_norm == 0.0:
        raise GeometryError("observer at the Earth's center")
    los = sat - gs
    los_norm = float(np.linalg.norm(los))
    if los_norm == 0.0:
        raise GeometryError("observer and target coincide")
    ratio = float(np.dot(los, gs)) / (gs_norm * los_norm)
    return math.degrees(math.asin(max(-1.0, min(1.0, ratio))))


def elevation_matrix_deg(gs_pos: np.ndarray, sat_pos: np.ndarray) -> np.ndarray:
    """Elevations of every satellite seen from every station, shape (G, N)."""
    los = sat_pos[None, :, :] - gs_pos[:, None, :]
    up = gs_pos / np.linalg.norm(gs_pos, axis=1, keepdims=True)
    dot = np.einsum("gnk,gk->gn", los, up)
    ratio = np.clip(dot / np.linalg.norm(los, axis=2), -1.0, 1.0)
    return np.degrees(np.arcsin(ratio))


def propagation_delay(a: Position3 | np.ndarray, b: Position3 | np.ndarray) -> float:
    """Light-speed delay between two points in seconds."""
    return math.dist(a, b) / SPEED_OF_LIGHT_M_S


def load_ground_stations(path: str | Path) -> list[GroundStation]:
    """Read `id,name,latitude_deg,longitude_deg,altitude_m` CSV (header required)."""
    path = Path(path)
    expected = ["id", "name", "latitude_deg", "longitude_deg", "altitude_m"]
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ConfigError(f"{path}: header must be {','.join(expected)}")
        stations = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                stations.append(GroundStation(
                    id=int(row[0]),
                    name=row[1],
                    latitude_deg=float(row[2]),
                    longitude_deg=float(row[3]),
                    altitude_m=float(row[4]),
                ))
            except (ValueError, IndexError) as e:
                raise ConfigError(f"{path}:{lineno}: bad ground station row: {e}") from e

    ids = [gs.id for gs in stations]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{path}: duplicate ground station ids")
    logger.info(f"Loaded {len(stations)} ground stations from {path}")
    return stations
