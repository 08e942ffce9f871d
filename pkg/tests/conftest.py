"""Shared fixtures: a small shell and a few stations."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from leotrace.geom import ConstellationSpec, GroundStation


@pytest.fixture
def small_spec() -> ConstellationSpec:
    return ConstellationSpec(
        altitude_km=600,
        num_orbits=8,
        sats_per_orbit=8,
        inclination_deg=53,
        min_elevation_deg=25,
        isl_rate_bps=20e6,
        gsl_rate_bps=20e6,
        isl_queue_pkts=100,
        gsl_queue_pkts=100,
    )


@pytest.fixture
def stations() -> list[GroundStation]:
    return [
        GroundStation(id=0, name="Frankfurt", latitude_deg=50.11, longitude_deg=8.68),
        GroundStation(id=1, name="Madrid", latitude_deg=40.42, longitude_deg=-3.70),
        GroundStation(id=2, name="New York", latitude_deg=40.71, longitude_deg=-74.01),
    ]

