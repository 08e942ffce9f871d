"""Workflow stages shared by the command line and the MCP server.

gen_state -> simulate (full-simulation branch)
          -> gen_traces -> replay (emulation branch)
validate runs both branches with identical workloads and compares them.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from leotrace import metrics, tracefile
from leotrace.errors import CorrelationError, UsageError
from leotrace.netsim import DeliveryLog, run_simulation
from leotrace.replay import ChannelConfig, EndPolicy, StartMode, open_pair, run_replay
from leotrace.scenario import PingParams, Scenario, SpeedtestParams, WorkloadKind
from leotrace.topology import NodeId, forwarding_timeline, write_timeline_csv
from leotrace.tracefile import TraceFile
from leotrace.tracer import Tracer
from leotrace.traffic import (
    BackgroundTraffic,
    FlowSpec,
    PingApp,
    SpeedtestApp,
    active_flow_series,
    generate_background_flows,
    offered_load_series,
    write_flows_csv,
)

logger = logging.getLogger(__name__)


def stage_dir(out_dir: str | Path, scenario: Scenario, stage: str) -> Path:
    path = Path(out_dir) / scenario.name / stage
    path.mkdir(parents=True, exist_ok=True)
    return path


def with_seed(scenario: Scenario, seed: int | None) -> Scenario:
    """Override the traffic and loss seeds."""
    if seed is None:
        return scenario
    seeds = scenario.seeds.model_copy(update={"traffic": seed, "loss": seed})
    return scenario.model_copy(update={"seeds": seeds})


# ============================================================================
# Workloads
# ============================================================================


@dataclass
class Measurements:
    """What the endpoint applications recorded in one run."""

    ping: PingApp | None = None
    speedtest: SpeedtestApp | None = None
    log: DeliveryLog | None = None
    stats: dict[str, Any] = field(default_factory=dict)

    @property
    def workloads(self) -> list[Any]:
        return [app for app in (self.speedtest, self.ping) if app is not None]


def build_measurements(
    kind: WorkloadKind | None,
    a: NodeId,
    b: NodeId,
    ping: PingParams | None = None,
    speedtest: SpeedtestParams | None = None,
) -> Measurements:
    ping = ping or PingParams()
    speedtest = speedtest or SpeedtestParams()
    m = Measurements()
    if kind in (WorkloadKind.PING, WorkloadKind.BOTH):
        m.ping = PingApp(a, b, ping.interval_s, ping.payload_bytes)
    if kind in (WorkloadKind.SPEEDTEST, WorkloadKind.BOTH):
        m.speedtest = SpeedtestApp(a, b, speedtest.start_s, speedtest.duration_s)
    return m


def background_flows(scenario: Scenario, num_stations: int) -> list[FlowSpec]:
    traffic = scenario.traffic
    if traffic.num_flows == 0:
        return []
    return generate_background_flows(
        n=traffic.num_flows,
        rate_range=(traffic.rate_min_bps, traffic.rate_max_bps),
        dur_range=(traffic.duration_min_s, traffic.duration_max_s),
        peak_s=traffic.peak_s,
        sigma_s=traffic.sigma_s,
        stations=[NodeId.gs(i) for i in range(num_stations)],
        seed=scenario.seeds.traffic,
        sim_duration_s=scenario.simulation.duration_s,
    )


def write_measurements(m: Measurements, directory: Path, duration_s: float, bin_s: float) -> list[Path]:
    written = []
    if m.log is not None:
        path = directory / "delivery_log.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            m.log.write_csv(f)
        written.append(path)
    if m.ping is not None:
        path = directory / "ping.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            m.ping.write_csv(f)
        written.append(path)
    if m.speedtest is not None:
        series = metrics.goodput_series(m.speedtest.log.deliveries, bin_s, duration_s)
        path = directory / "goodput.csv"
        _write_series(path, ["time_s", "goodput_bps"], series.times, series.values)
        written.append(path)
        path = directory / "cwnd.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["time_s", "cwnd_pkts"])
            for t, w in m.speedtest.log.cwnd:
                writer.writerow([f"{t:.6f}", f"{w:.3f}"])
        written.append(path)
    return written


def _write_series(path: Path, header: list[str], *columns: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow(["" if isinstance(v, float) and math.isnan(v) else f"{v:.6f}" for v in map(float, row)])


# ============================================================================
# Stages
# ============================================================================


def gen_state(scenario: Scenario, out_dir: str | Path, workers: int = 1) -> tuple[Path, int]:
    """Write the forwarding-state timeline. Returns (path, number of epochs)."""
    stations = scenario.stations()
    sim = scenario.simulation
    states = forwarding_timeline(scenario.constellation, stations, sim.fs_interval_s, sim.duration_s, workers=workers)
    path = stage_dir(out_dir, scenario, "state") / "forwarding_state.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        rows = write_timeline_csv(states, f)
    logger.info(f"Wrote {len(states)} forwarding states ({rows} rows) to {path}")
    return path, len(states)


def flows_gen(scenario: Scenario, out_dir: str | Path) -> tuple[Path, Path, int]:
    """Write the background flow list and its load profile."""
    stations = scenario.stations()
    flows = background_flows(scenario, len(stations))
    directory = stage_dir(out_dir, scenario, "flows")
    flows_path = directory / "flows.csv"
    with open(flows_path, "w", encoding="utf-8", newline="") as f:
        write_flows_csv(flows, f)
    duration = scenario.simulation.duration_s
    t = np.arange(0.0, duration, 1.0)
    load_path = directory / "flow_load.csv"
    _write_series(load_path, ["time_s", "active_flows", "offered_bps"], t,
                  active_flow_series(flows, duration).astype(float), offered_load_series(flows, duration))
    logger.info(f"Wrote {len(flows)} flows to {flows_path}")
    return flows_path, load_path, len(flows)


def run_full_simulation(scenario: Scenario, kind: WorkloadKind | None, tracer: Tracer | None = None) -> Measurements:
    stations = scenario.stations()
    config = scenario.sim_config(stations)
    a, b = scenario.endpoint_nodes
    m = build_measurements(kind, a, b, scenario.ping, scenario.speedtest)
    background = BackgroundTraffic(background_flows(scenario, len(stations)))
    result = run_simulation(config, [background, *m.workloads], tracer)
    m.log = result.log
    m.stats = {"events": result.simulator.loop.processed, **result.log.counts()}
    return m


def simulate(scenario: Scenario, out_dir: str | Path, kind: WorkloadKind | None = None) -> tuple[Measurements, list[Path]]:
    """Full-simulation branch. kind defaults to the scenario's workload."""
    kind = scenario.workload if kind is None else kind
    m = run_full_simulation(scenario, kind)
    written = write_measurements(
        m, stage_dir(out_dir, scenario, "sim"), scenario.simulation.duration_s, scenario.validation.goodput_bin_s
    )
    return m, written


def build_traces(scenario: Scenario) -> tuple[TraceFile, TraceFile, DeliveryLog]:
    a, b = scenario.endpoint_nodes
    tracer = Tracer(a, b, scenario.trace.interval_s, scenario.trace.samples_per_record)
    m = run_full_simulation(scenario, None, tracer)
    fwd, ret = tracer.trace_files(scenario.name)
    return fwd, ret, m.log


def gen_traces(scenario: Scenario, out_dir: str | Path) -> tuple[Path, Path]:
    """Emulation branch: background-only simulation with the tracer attached."""
    fwd, ret, _ = build_traces(scenario)
    directory = stage_dir(out_dir, scenario, "traces")
    fwd_path, ret_path = directory / "forward.csv", directory / "return.csv"
    tracefile.write(fwd, fwd_path)
    tracefile.write(ret, ret_path)
    return fwd_path, ret_path


def replay_traces(
    fwd: TraceFile,
    ret: TraceFile,
    measurements: Measurements,
    a: NodeId,
    b: NodeId,
    start_mode: StartMode = StartMode.IMMEDIATE,
    delay_offset_us: int = 0,
    loss_seed: int = 0,
    end_policy: EndPolicy = EndPolicy.HOLD_LAST,
    bdp_in_queue: bool = False,
    duration_s: float | None = None,
) -> Measurements:
    """Virtual-time replay of a trace pair with the given applications."""
    if fwd.resolution_ms != ret.resolution_ms:
        raise UsageError("forward and return traces must share a resolution")
    common = dict(start_mode=start_mode, delay_offset_us=delay_offset_us, end_policy=end_policy, bdp_in_queue=bdp_in_queue)
    pair = open_pair(
        ChannelConfig(fwd, loss_seed=loss_seed, **common),
        ChannelConfig(ret, loss_seed=loss_seed + 1, **common),
    )
    duration = duration_s if duration_s is not None else min(fwd.duration_ms, ret.duration_ms) / 1000.0
    transport = run_replay(pair, a, b, measurements.workloads, duration)
    measurements.stats = {name: s.to_dict() for name, s in transport.stats.items()}
    return measurements


def replay_scenario(
    scenario: Scenario,
    fwd: TraceFile,
    ret: TraceFile,
    kind: WorkloadKind | None = None,
    loss_seed: int | None = None,
) -> Measurements:
    a, b = scenario.endpoint_nodes
    kind = scenario.workload if kind is None else kind
    params = scenario.replay
    return replay_traces(
        fwd, ret, build_measurements(kind, a, b, scenario.ping, scenario.speedtest), a, b,
        start_mode=params.start_mode,
        delay_offset_us=params.delay_offset_us,
        loss_seed=scenario.seeds.loss if loss_seed is None else loss_seed,
        end_policy=params.end_policy,
        bdp_in_queue=params.bdp_in_queue,
        duration_s=scenario.simulation.duration_s,
    )


# ============================================================================
# Validation
# ============================================================================


@dataclass
class ValidationReport:
    scenario: str
    rows: list[tuple[str, float]] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    written: list[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def value(self, metric: str) -> float:
        for name, v in self.rows:
            if name == metric:
                return v
        raise KeyError(metric)

    def as_text(self) -> str:
        lines = [f"{name}: {v:.6g}" for name, v in self.rows]
        lines.append("PASSED" if self.passed else "FAILED: " + "; ".join(self.failures))
        return "\n".join(lines)


def _compare(prefix: str, reference: metrics.TimeSeries, other: metrics.TimeSeries, max_lag_s: float) -> list[tuple[str, float]]:
    try:
        comparison = metrics.compare(reference, other, max_lag_s)
    except (CorrelationError, UsageError) as e:
        logger.warning(f"{prefix}: comparison undefined ({e})")
        return [(f"{prefix}.{name}", math.nan) for name in ("mae", "r_squared", "pearson", "lag_s", "lag_corrected_pearson", "mean_reference")]
    return [(f"{prefix}.{name}", value) for name, value in comparison.rows()]


def rtt_series(ping: PingApp) -> metrics.TimeSeries:
    return metrics.TimeSeries(ping.start_s, ping.interval_s, ping.rtts())


def goodput(m: Measurements, scenario: Scenario) -> metrics.TimeSeries:
    return metrics.goodput_series(
        m.speedtest.log.deliveries, scenario.validation.goodput_bin_s, scenario.simulation.duration_s
    )


def cwnd(m: Measurements, scenario: Scenario) -> metrics.TimeSeries:
    return metrics.sample_series(
        m.speedtest.log.cwnd, scenario.validation.goodput_bin_s, scenario.simulation.duration_s
    )


def validate(scenario: Scenario, out_dir: str | Path) -> ValidationReport:
    """Closed loop: full simulation vs replay of its own traces, per workload."""
    directory = stage_dir(out_dir, scenario, "validate")
    fwd, ret, _ = build_traces(scenario)
    tracefile.write(fwd, directory / "forward.csv")
    tracefile.write(ret, directory / "return.csv")
    report = ValidationReport(scenario.name)
    max_lag_s = scenario.validation.max_lag_s

    kinds = {
        WorkloadKind.SPEEDTEST: [WorkloadKind.SPEEDTEST],
        WorkloadKind.PING: [WorkloadKind.PING],
        WorkloadKind.BOTH: [WorkloadKind.SPEEDTEST, WorkloadKind.PING],
        WorkloadKind.NONE: [],
    }[scenario.workload]

    for kind in kinds:
        sim = run_full_simulation(scenario, kind)
        emu = replay_scenario(scenario, fwd, ret, kind)
        repeats = [
            replay_scenario(scenario, fwd, ret, kind, loss_seed=scenario.seeds.loss + 2 * i)
            for i in range(1, scenario.validation.repetitions)
        ]
        if kind is WorkloadKind.SPEEDTEST:
            ref, rep = goodput(sim, scenario), goodput(emu, scenario)
            report.rows += _compare("goodput", ref, rep, max_lag_s)
            report.rows += _compare("cwnd", cwnd(sim, scenario), cwnd(emu, scenario), max_lag_s)
            report.rows += [
                ("goodput.sim_transmitted_bytes", float(sim.speedtest.log.transmitted_bytes)),
                ("goodput.replay_transmitted_bytes", float(emu.speedtest.log.transmitted_bytes)),
            ]
            for i, extra in enumerate(repeats, start=1):
                report.rows += _compare(f"goodput.replay_vs_replay_{i}", rep, goodput(extra, scenario), max_lag_s)
            path = directory / "goodput_series.csv"
            _write_series(path, ["time_s", "sim_value", "replay_value"], ref.times, ref.values, rep.values)
            report.written.append(path)
        else:
            ref, rep = rtt_series(sim.ping), rtt_series(emu.ping)
            report.rows += _compare("rtt", ref, rep, max_lag_s)
            report.rows += [
                ("rtt.sim_timeouts", float(np.isnan(ref.values).sum())),
                ("rtt.replay_timeouts", float(np.isnan(rep.values).sum())),
            ]
            for i, extra in enumerate(repeats, start=1):
                report.rows += _compare(f"rtt.replay_vs_replay_{i}", rep, rtt_series(extra.ping), max_lag_s)
            path = directory / "rtt_series.csv"
            n = min(len(ref), len(rep))
            _write_series(path, ["time_s", "sim_value", "replay_value"], ref.times[:n], ref.values[:n], rep.values[:n])
            report.written.append(path)

    _check_thresholds(scenario, report)
    path = directory / "report.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["metric", "scenario", "value"])
        for name, value in report.rows:
            writer.writerow([name, scenario.name, "" if math.isnan(value) else f"{value:.6g}"])
    report.written.append(path)
    logger.info(f"Validation of '{scenario.name}': {'passed' if report.passed else 'failed'}")
    return report


def _check_thresholds(scenario: Scenario, report: ValidationReport) -> None:
    limits = scenario.validation.thresholds
    if limits is None:
        return
    values = dict(report.rows)

    def need(metric: str, ok: bool, text: str) -> None:
        if metric in values and not ok:
            report.failures.append(text)

    if "rtt.lag_corrected_pearson" in values:
        r = values["rtt.lag_corrected_pearson"]
        need("rtt.lag_corrected_pearson", r >= limits.rtt_min_pearson, f"rtt lag-corrected pearson {r:.3f} < {limits.rtt_min_pearson}")
        lag = values["rtt.lag_s"]
        need("rtt.lag_s", abs(lag) <= limits.max_abs_lag_s, f"rtt lag {lag:.2f}s exceeds {limits.max_abs_lag_s}s")
    if "goodput.lag_corrected_pearson" in values:
        r = values["goodput.lag_corrected_pearson"]
        need("goodput.lag_corrected_pearson", r >= limits.goodput_min_pearson, f"goodput lag-corrected pearson {r:.3f} < {limits.goodput_min_pearson}")
        lag = values["goodput.lag_s"]
        need("goodput.lag_s", abs(lag) <= limits.max_abs_lag_s, f"goodput lag {lag:.2f}s exceeds {limits.max_abs_lag_s}s")
        mean = values["goodput.mean_reference"]
        err = values["goodput.mae"]
        need("goodput.mae", err <= limits.goodput_max_mae_fraction * mean,
             f"goodput MAE {err / 1e6:.2f} Mbps exceeds {limits.goodput_max_mae_fraction:.0%} of {mean / 1e6:.2f} Mbps")
