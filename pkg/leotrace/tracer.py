"""Trace packet injection and aggregation into forward/return Trace Files."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

from leotrace.errors import UsageError
from leotrace.netsim import PACKET_SIZE_BYTES, DropReason, Packet, PacketClass, Simulator
from leotrace.topology import NodeId, epoch_count
from leotrace.tracefile import SENTINEL, Direction, TraceFile, TraceRecord, quantize_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TraceSample:
    send_s: float
    delivered: bool
    delay_s: float = math.nan
    min_avail_bps: float = math.nan
    bottleneck_queue_avail_pkts: int = SENTINEL
    path_bdp_pkts: int = SENTINEL
    route_id: int | None = None


def observe(send_s: float, delivered_s: float, observations: Sequence[tuple[float, int]], rid: int) -> TraceSample:
    """Reduce per-hop (available bps, queue headroom) pairs to one sample.

    The bottleneck is the first hop with the least available bandwidth; its
    queue headroom is the one reported.
    """
    if not observations:
        raise UsageError("delivered trace packet carries no hop observations")
    hop = min(range(len(observations)), key=lambda i: observations[i][0])
    avail, headroom = observations[hop]
    delay = delivered_s - send_s
    bdp = math.floor(avail * delay / (PACKET_SIZE_BYTES * 8))
    return TraceSample(send_s, True, delay, avail, headroom, bdp, rid)


def _half_up(x: float) -> int:
    return math.floor(x + 0.5)


def aggregate(samples: Sequence[TraceSample], previous_route: int = 0) -> TraceRecord:
    """Average n consecutive samples into one record (delivered samples only)."""
    if not samples:
        raise UsageError("cannot aggregate an empty group of trace samples")
    t_ms = _half_up(samples[0].send_s * 1000.0)
    delivered = [s for s in samples if s.delivered]
    loss = quantize_loss((len(samples) - len(delivered)) / len(samples))
    if not delivered:
        return TraceRecord(t_ms, SENTINEL, SENTINEL, SENTINEL, 1.0, previous_route, SENTINEL)
    k = len(delivered)
    return TraceRecord(
        t_ms=t_ms,
        delay_us=_half_up(sum(s.delay_s for s in delivered) / k * 1e6),
        rate_bps=_half_up(sum(s.min_avail_bps for s in delivered) / k),
        queue_capacity_pkts=_half_up(sum(s.bottleneck_queue_avail_pkts for s in delivered) / k),
        loss_ratio=loss,
        route_id=delivered[-1].route_id,
        bdp_pkts=_half_up(sum(s.path_bdp_pkts for s in delivered) / k),
    )


def aggregate_stream(samples: Sequence[TraceSample], n: int) -> list[TraceRecord]:
    if n < 1:
        raise UsageError("samples per record must be >= 1")
    records: list[TraceRecord] = []
    route = 0
    for i in range(0, len(samples) - len(samples) % n, n):
        record = aggregate(samples[i:i + n], route)
        route = record.route_id
        records.append(record)
    return records


class Tracer:
    """Injects one trace packet per interval in each direction between a and b."""

    def __init__(self, a: NodeId, b: NodeId, interval_s: float = 0.002, samples_per_record: int = 5):
        if interval_s <= 0:
            raise UsageError("trace interval must be positive")
        if samples_per_record < 1:
            raise UsageError("samples per record must be >= 1")
        self.a = a
        self.b = b
        self.interval_s = interval_s
        self.samples_per_record = samples_per_record
        self.count = 0
        self._samples: dict[Direction, list[TraceSample | None]] = {Direction.FORWARD: [], Direction.RETURN: []}
        self._sim: Simulator | None = None
        self.seed = 0

    def install(self, sim: Simulator, duration_s: float, seed: int = 0) -> None:
        self._sim = sim
        self.seed = seed
        self.count = epoch_count(self.interval_s, duration_s)
        for direction in Direction:
            self._samples[direction] = [None] * self.count
        sim.loop.schedule(0.0, self._inject, 0)

    def _inject(self, k: int) -> None:
        sim = self._sim
        sim.send(PacketClass.TRACE_VIRTUAL, self.a, self.b, 0, payload=(Direction.FORWARD, k))
        sim.send(PacketClass.TRACE_VIRTUAL, self.b, self.a, 0, payload=(Direction.RETURN, k))
        if k + 1 < self.count:
            sim.loop.schedule((k + 1) * self.interval_s, self._inject, k + 1)

    def on_delivered(self, pkt: Packet, now: float, rid: int) -> None:
        direction, k = pkt.payload
        self._samples[direction][k] = observe(pkt.created_s, now, pkt.observations, rid)

    def on_dropped(self, pkt: Packet, now: float, reason: DropReason) -> None:
        direction, k = pkt.payload
        self._samples[direction][k] = TraceSample(pkt.created_s, False)

    def samples(self, direction: Direction) -> list[TraceSample]:
        """Samples in send order; packets still in flight count as not delivered."""
        return [
            s if s is not None else TraceSample(k * self.interval_s, False)
            for k, s in enumerate(self._samples[direction])
        ]

    def trace_files(self, scenario: str, seed: int | None = None) -> tuple[TraceFile, TraceFile]:
        """Aggregate both directions; the header seed defaults to the simulation seed."""
        seed = self.seed if seed is None else seed
        resolution_ms = _half_up(self.interval_s * self.samples_per_record * 1000.0)
        files = []
        for direction in Direction:
            records = aggregate_stream(self.samples(direction), self.samples_per_record)
            # t_ms on the exact record grid
            records = [
                TraceRecord(i * resolution_ms, r.delay_us, r.rate_bps, r.queue_capacity_pkts, r.loss_ratio, r.route_id, r.bdp_pkts)
                for i, r in enumerate(records)
            ]
            files.append(TraceFile(scenario, direction, resolution_ms, seed, tuple(records)))
        fwd, ret = files
        logger.info(
            f"Built trace files: {len(fwd)} records per direction at {resolution_ms} ms "
            f"({sum(r.loss_ratio == 1.0 for r in fwd.records)} fully lost forward)"
        )
        return fwd, ret
