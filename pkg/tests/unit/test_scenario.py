"""Scenario file loading and validation."""

from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from leotrace.errors import ConfigError
from leotrace.replay import StartMode
from leotrace.scenario import Scenario, WorkloadKind, load_scenario, scenario_schema
from leotrace.topology import NodeId
from tests.helpers import SCENARIOS

MINIMAL = {
    "name": "tiny",
    "constellation": {"altitude_km": 600, "num_orbits": 8, "sats_per_orbit": 8, "inclination_deg": 53},
    "stations_file": "gs.csv",
    "endpoints": [0, 1],
}


def _write(tmp_path, data, stations: int = 2):
    lines = ["id,name,latitude_deg,longitude_deg,altitude_m"]
    lines += [f"{i},S{i},{10 * i},{5 * i},0" for i in range(stations)]
    (tmp_path / "gs.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


@pytest.mark.parametrize("name", ["desk", "reconfiguration", "dropout", "handover", "smoke", "kuiper"])
def test_bundled_scenarios_load(name):
    scenario = load_scenario(SCENARIOS / f"{name}.json")
    assert scenario.name == name
    stations = scenario.stations()
    assert scenario.sim_config(stations).stations == tuple(stations)


def test_defaults(tmp_path):
    scenario = load_scenario(_write(tmp_path, MINIMAL))
    assert scenario.simulation.fs_interval_s == 0.1
    assert scenario.simulation.duration_s == 200.0
    assert scenario.traffic.num_flows == 10000
    assert scenario.trace.interval_s == 0.002 and scenario.trace.samples_per_record == 5
    assert scenario.workload is WorkloadKind.BOTH
    assert scenario.replay.start_mode is StartMode.IMMEDIATE
    assert scenario.validation.thresholds is None
    assert scenario.endpoint_nodes == (NodeId.gs(0), NodeId.gs(1))
    assert scenario.stations_path == tmp_path / "gs.csv"


def test_preset_with_overrides():
    scenario = Scenario.model_validate({
        **MINIMAL,
        "constellation": {"preset": "Starlink", "gsl_rate_bps": 50e6},
    })
    assert scenario.constellation.num_satellites == 72 * 22
    assert scenario.constellation.gsl_rate_bps == 50e6
    with pytest.raises(ValidationError):
        Scenario.model_validate({**MINIMAL, "constellation": {"preset": "iridium"}})


@pytest.mark.parametrize(
    "patch",
    [
        {"endpoints": [1, 1]},
        {"unknown_key": 1},
        {"traffic": {"rate_min_bps": 2e6, "rate_max_bps": 1e6}},
        {"simulation": {"duration_s": 0}},
        {"workload": "bulk"},
        {"seeds": {"traffic": -1}},
    ],
    ids=["same-endpoints", "extra-key", "rate-order", "zero-duration", "bad-workload", "negative-seed"],
)
def test_invalid_scenarios(tmp_path, patch):
    with pytest.raises(ConfigError):
        load_scenario(_write(tmp_path, {**MINIMAL, **patch}))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "absent.json")
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_station_checks(tmp_path):
    scenario = load_scenario(_write(tmp_path, {**MINIMAL, "endpoints": [0, 3]}))
    with pytest.raises(ConfigError):
        scenario.stations()
    (tmp_path / "gs.csv").unlink()
    with pytest.raises(ConfigError):
        scenario.stations()


def test_sim_config_errors_become_config_errors(tmp_path):
    scenario = load_scenario(_write(tmp_path, {
        **MINIMAL,
        "simulation": {"reconfig_interval_s": 1.0, "reconfig_duration_s": 2.0},
    }))
    with pytest.raises(ConfigError):
        scenario.sim_config()


def test_schema_lists_sections():
    schema = scenario_schema()
    for key in ("constellation", "stations_file", "endpoints", "traffic", "replay", "validation"):
        assert key in schema["properties"]
