"""Test helpers shared across suites."""

from __future__ import annotations

from pathlib import Path

from leotrace.tracefile import Direction, TraceFile, TraceRecord

REPO_ROOT = Path(__file__).parent.parent
SCENARIOS = REPO_ROOT / "scenarios"


def constant_trace(
    delay_us: int = 20_000,
    rate_bps: int = 10_000_000,
    queue_capacity_pkts: int = 100,
    loss_ratio: float = 0.0,
    records: int = 1000,
    resolution_ms: int = 10,
    route_id: int = 0xABC,
    direction: Direction = Direction.FORWARD,
) -> TraceFile:
    return TraceFile(
        scenario="constant",
        direction=direction,
        resolution_ms=resolution_ms,
        seed=0,
        records=tuple(
            TraceRecord(i * resolution_ms, delay_us, rate_bps, queue_capacity_pkts, loss_ratio, route_id, 10)
            for i in range(records)
        ),
    )
