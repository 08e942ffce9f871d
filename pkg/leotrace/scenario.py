"""Scenario files: JSON experiment definitions validated with pydantic.

Defaults are the reference experiment settings. Relative file
paths inside a scenario resolve against the scenario file's directory.
"""

from __future__ import annotations

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from leotrace.config import get_config
from leotrace.errors import ConfigError
from leotrace.geom import PRESETS, ConstellationSpec, GroundStation, load_ground_stations
from leotrace.netsim import SimConfig
from leotrace.replay import EndPolicy, StartMode
from leotrace.topology import NodeId

logger = logging.getLogger(__name__)


class WorkloadKind(str, Enum):
    SPEEDTEST = "speedtest"
    PING = "ping"
    BOTH = "both"
    NONE = "none"


class SimulationParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fs_interval_s: float = Field(default=0.1, gt=0)
    duration_s: float = Field(default=200.0, gt=0)
    handover_loss_s: float = Field(default=0.25, ge=0)
    reconfig_interval_s: float = Field(default=0.0, ge=0)
    reconfig_duration_s: float = Field(default=0.0, ge=0)
    gsl_reservation_bps: dict[int, float] = Field(default_factory=dict)


class TrafficParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_flows: int = Field(default=10000, ge=0)
    rate_min_bps: float = Field(default=0.1e6, gt=0)
    rate_max_bps: float = Field(default=2.0e6, gt=0)
    duration_min_s: float = Field(default=10.0, gt=0)
    duration_max_s: float = Field(default=15.0, gt=0)
    peak_s: float = Field(default=100.0, ge=0)
    sigma_s: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _ranges(self) -> "TrafficParams":
        if self.rate_min_bps > self.rate_max_bps:
            raise ValueError("rate_min_bps > rate_max_bps")
        if self.duration_min_s > self.duration_max_s:
            raise ValueError("duration_min_s > duration_max_s")
        return self


class TraceParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    interval_s: float = Field(default=0.002, gt=0)
    samples_per_record: int = Field(default=5, ge=1)


class PingParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    interval_s: float = Field(default=0.5, gt=0)
    payload_bytes: int = Field(default=64, ge=1, le=1500)


class SpeedtestParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start_s: float = Field(default=0.0, ge=0)
    duration_s: float | None = Field(default=None, gt=0)


class ReplayParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start_mode: StartMode = StartMode.IMMEDIATE
    delay_offset_us: int = 0
    end_policy: EndPolicy = EndPolicy.HOLD_LAST
    bdp_in_queue: bool = False


class Thresholds(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rtt_min_pearson: float = 0.95
    goodput_min_pearson: float = 0.85
    max_abs_lag_s: float = 0.5
    goodput_max_mae_fraction: float = 0.15


class ValidationParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    goodput_bin_s: float = Field(default=0.1, gt=0)
    max_lag_s: float = Field(default=3.0, ge=0)
    repetitions: int = Field(default=1, ge=1)
    thresholds: Thresholds | None = None


class Seeds(BaseModel):
    model_config = ConfigDict(extra="forbid")

    traffic: int = Field(default=1, ge=0, lt=2**64)
    loss: int = Field(default=1, ge=0, lt=2**64)
    simulation: int = Field(default=0, ge=0, lt=2**64)


class Scenario(BaseModel):
    """One experiment: constellation, stations, endpoints and workflow parameters."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    constellation: ConstellationSpec
    stations_file: str
    endpoints: tuple[int, int]
    simulation: SimulationParams = Field(default_factory=SimulationParams)
    traffic: TrafficParams = Field(default_factory=TrafficParams)
    trace: TraceParams = Field(default_factory=TraceParams)
    workload: WorkloadKind = WorkloadKind.BOTH
    ping: PingParams = Field(default_factory=PingParams)
    speedtest: SpeedtestParams = Field(default_factory=SpeedtestParams)
    replay: ReplayParams = Field(default_factory=ReplayParams)
    validation: ValidationParams = Field(default_factory=ValidationParams)
    seeds: Seeds = Field(default_factory=Seeds)
    base_dir: Path = Field(default=Path("."), exclude=True)

    @field_validator("constellation", mode="before")
    @classmethod
    def expand_preset(cls, v: Any) -> Any:
        if isinstance(v, dict) and "preset" in v:
            overrides = {k: val for k, val in v.items() if k != "preset"}
            name = str(v["preset"]).lower()
            if name not in PRESETS:
                raise ValueError(f"unknown preset {v['preset']!r} (known: {', '.join(PRESETS)})")
            return {**PRESETS[name], **overrides}
        return v

    @field_validator("endpoints")
    @classmethod
    def distinct_endpoints(cls, v: tuple[int, int]) -> tuple[int, int]:
        if v[0] == v[1]:
            raise ValueError("endpoints must be two different stations")
        return v

    @property
    def stations_path(self) -> Path:
        path = Path(self.stations_file)
        return path if path.is_absolute() else self.base_dir / path

    def stations(self) -> list[GroundStation]:
        path = self.stations_path
        if not path.exists():
            raise ConfigError(f"stations file not found: {path}")
        stations = load_ground_stations(path)
        for endpoint in self.endpoints:
            if not 0 <= endpoint < len(stations):
                raise ConfigError(f"endpoint {endpoint} is not a station id in {path}")
        return stations

    @property
    def endpoint_nodes(self) -> tuple[NodeId, NodeId]:
        return NodeId.gs(self.endpoints[0]), NodeId.gs(self.endpoints[1])

    def sim_config(self, stations: list[GroundStation] | None = None, seed: int | None = None) -> SimConfig:
        stations = stations if stations is not None else self.stations()
        sim = self.simulation
        config = get_config()
        try:
            return SimConfig(
                spec=self.constellation,
                stations=tuple(stations),
                fs_interval_s=sim.fs_interval_s,
                duration_s=sim.duration_s,
                handover_loss_s=sim.handover_loss_s,
                reconfig_interval_s=sim.reconfig_interval_s,
                reconfig_duration_s=sim.reconfig_duration_s,
                gsl_reservation=sim.gsl_reservation_bps,
                seed=self.seeds.simulation if seed is None else seed,
                utilization_window_s=config.utilization_window_s,
                position_cache_s=config.position_cache_s,
            )
        except ValidationError as e:
            raise ConfigError(f"scenario {self.name}: {e}") from e


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario JSON file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    try:
        scenario = Scenario.model_validate({**data, "base_dir": path.parent})
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.info(f"Loaded scenario '{scenario.name}' from {path}")
    return scenario


def scenario_schema() -> dict[str, Any]:
    return Scenario.model_json_schema()
