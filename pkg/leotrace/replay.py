"""Trace-replay channel: per-record bandwidth, delay, queue capacity and loss.

A Channel turns an offered packet (size, arrival time) into a verdict. The
same state machine serves the deterministic virtual-time harness below and
the wall-clock relay in `leotrace.relay`.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np

from leotrace.errors import ConfigError, OffsetRangeError, UsageError
from leotrace.netsim import EventLoop, Packet, PacketClass
from leotrace.topology import NodeId
from leotrace.tracefile import SENTINEL, TraceFile, TraceRecord, validate

logger = logging.getLogger(__name__)


class StartMode(str, Enum):
    IMMEDIATE = "immediate"
    FIRST_PACKET_TRIGGER = "trigger"


class EndPolicy(str, Enum):
    HOLD_LAST = "hold_last"
    DROP_ALL = "drop_all"


class ChannelDrop(str, Enum):
    LOSS = "loss"
    QUEUE = "queue"
    STALLED = "stalled"
    END = "end"


@dataclass(frozen=True)
class ChannelConfig:
    trace: TraceFile
    start_mode: StartMode = StartMode.IMMEDIATE
    delay_offset_us: int = 0
    loss_seed: int = 0
    end_policy: EndPolicy = EndPolicy.HOLD_LAST
    bdp_in_queue: bool = False

    def __post_init__(self) -> None:
        validate(self.trace)
        if not self.trace.records:
            raise ConfigError("cannot replay an empty trace")
        for r in self.trace.records:
            if not r.unmeasured and r.delay_us + self.delay_offset_us < 0:
                raise OffsetRangeError(
                    f"delay offset {self.delay_offset_us} us makes the delay at t_ms={r.t_ms} negative"
                )


@dataclass(frozen=True)
class ReplayVerdict:
    release_s: float | None = None
    dropped: ChannelDrop | None = None

    @property
    def delivered(self) -> bool:
        return self.dropped is None


class StartTrigger:
    """Channel epoch shared by the two directions of a pair."""

    def __init__(self, t0: float | None = None):
        self.t0 = t0

    @property
    def started(self) -> bool:
        return self.t0 is not None

    def fire(self, t: float) -> float:
        if self.t0 is None:
            self.t0 = t
            logger.info(f"Replay triggered at {t:.6f}s")
        return self.t0


class Channel:
    """One direction of the emulated path (ChannelState plus offer)."""

    def __init__(self, config: ChannelConfig, trigger: StartTrigger):
        self.config = config
        self.trigger = trigger
        self.records: tuple[TraceRecord, ...] = config.trace.records
        self.resolution_s = config.trace.resolution_ms / 1000.0
        self.rng = np.random.default_rng(config.loss_seed)
        self.link_free_s = 0.0
        self.last_release_s = -math.inf
        self.current_epoch_route: int | None = None
        self._last_arrival_s = -math.inf
        self._pending_starts: deque[float] = deque()
        # index of the first record at or after i with a positive rate, len() if none
        nxt = [len(self.records)] * (len(self.records) + 1)
        for i in range(len(self.records) - 1, -1, -1):
            nxt[i] = i if self.records[i].rate_bps > 0 else nxt[i + 1]
        self._next_positive = nxt

    @property
    def t0(self) -> float | None:
        return self.trigger.t0

    @property
    def queue_occupancy_pkts(self) -> int:
        return len(self._pending_starts)

    def record_index(self, t: float) -> int:
        return max(0, math.floor((t - self.trigger.t0) / self.resolution_s + 1e-9))

    def active_record(self, t: float) -> TraceRecord | None:
        i = self.record_index(t)
        if i >= len(self.records):
            return self.records[-1] if self.config.end_policy is EndPolicy.HOLD_LAST else None
        return self.records[i]

    def _capacity(self, r: TraceRecord) -> int:
        if r.queue_capacity_pkts == SENTINEL:
            return 0
        if self.config.bdp_in_queue and r.bdp_pkts > 0:
            return r.queue_capacity_pkts + r.bdp_pkts
        return r.queue_capacity_pkts

    def _serialization_start(self, earliest: float) -> tuple[float, TraceRecord] | None:
        """First instant >= earliest with a positive rate, and the record governing it."""
        i = self.record_index(earliest)
        n = len(self.records)
        if i >= n:
            if self.config.end_policy is EndPolicy.DROP_ALL:
                return None
            last = self.records[-1]
            return (earliest, last) if last.rate_bps > 0 else None
        if self.records[i].rate_bps > 0:
            return earliest, self.records[i]
        j = self._next_positive[i]
        if j >= n:
            return None
        return self.trigger.t0 + j * self.resolution_s, self.records[j]

    def offer(self, size_bytes: int, arrival_s: float) -> ReplayVerdict:
        if arrival_s < self._last_arrival_s:
            raise UsageError(f"arrival time went backwards ({arrival_s} < {self._last_arrival_s})")
        self._last_arrival_s = arrival_s
        self.trigger.fire(arrival_s)

        r = self.active_record(arrival_s)
        if r is None:
            return ReplayVerdict(dropped=ChannelDrop.END)

        u = self.rng.random()
        if u < r.loss_ratio or r.unmeasured:
            return ReplayVerdict(dropped=ChannelDrop.LOSS)

        pending = self._pending_starts
        while pending and pending[0] <= arrival_s:
            pending.popleft()
        if len(pending) >= self._capacity(r):
            return ReplayVerdict(dropped=ChannelDrop.QUEUE)

        slot = self._serialization_start(max(arrival_s, self.link_free_s))
        if slot is None:
            return ReplayVerdict(dropped=ChannelDrop.STALLED)
        start, rate_record = slot
        finish = start + size_bytes * 8 / rate_record.rate_bps
        self.link_free_s = finish
        if start > arrival_s:
            pending.append(start)

        release = finish + (r.delay_us + self.config.delay_offset_us) / 1e6
        if r.route_id == self.current_epoch_route:
            release = max(release, self.last_release_s)
        else:
            self.current_epoch_route = r.route_id
        self.last_release_s = release
        return ReplayVerdict(release_s=release)


@dataclass
class ChannelPair:
    forward: Channel
    ret: Channel
    trigger: StartTrigger

    @property
    def started(self) -> bool:
        return self.trigger.started


def open_pair(fwd: ChannelConfig, ret: ChannelConfig, now: float = 0.0) -> ChannelPair:
    """Bidirectional pair; in trigger mode the first packet on either side sets t0."""
    if fwd.trace.resolution_ms != ret.trace.resolution_ms:
        raise ConfigError(
            f"trace resolutions differ ({fwd.trace.resolution_ms} ms vs {ret.trace.resolution_ms} ms)"
        )
    if fwd.start_mode != ret.start_mode:
        raise ConfigError("both directions must use the same start mode")
    trigger = StartTrigger(now if fwd.start_mode is StartMode.IMMEDIATE else None)
    return ChannelPair(Channel(fwd, trigger), Channel(ret, trigger), trigger)


# ============================================================================
# Virtual-time harness
# ============================================================================


@dataclass
class DirectionStats:
    offered: int = 0
    delivered: int = 0
    drops: Counter = field(default_factory=Counter)
    reorders: int = 0
    max_lateness_s: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "offered": self.offered,
            "delivered": self.delivered,
            "drops": {k.value if isinstance(k, Enum) else str(k): v for k, v in sorted(self.drops.items())},
            "reorders": self.reorders,
            "max_lateness_ms": round(self.max_lateness_s * 1000, 3),
        }


class ReplayTransport:
    """PacketTransport over a channel pair in virtual time (a = forward sender)."""

    def __init__(self, pair: ChannelPair, a: NodeId, b: NodeId):
        self.pair = pair
        self.a = a
        self.b = b
        self.loop = EventLoop()
        self.stats = {"forward": DirectionStats(), "return": DirectionStats()}
        self._next_id = 0

    def has_endpoint(self, node: NodeId) -> bool:
        return node in (self.a, self.b)

    def send(
        self,
        cls: PacketClass,
        src: NodeId,
        dst: NodeId,
        size_bytes: int,
        payload: Any = None,
        on_deliver: Callable[[Packet, float], None] | None = None,
    ) -> Packet | None:
        if cls is PacketClass.TRACE_VIRTUAL:
            raise UsageError("trace packets cannot be sent over a replay channel")
        if (src, dst) == (self.a, self.b):
            channel, stats = self.pair.forward, self.stats["forward"]
        elif (src, dst) == (self.b, self.a):
            channel, stats = self.pair.ret, self.stats["return"]
        else:
            raise UsageError(f"replay pair only connects {self.a} and {self.b}, not {src}->{dst}")
        now = self.loop.now
        pkt = Packet(self._next_id, cls, src, dst, size_bytes, now, payload, on_deliver)
        self._next_id += 1
        stats.offered += 1
        verdict = channel.offer(size_bytes, now)
        if verdict.delivered:
            self.loop.schedule(verdict.release_s, self._deliver, pkt, stats)
        else:
            stats.drops[verdict.dropped] += 1
        return pkt

    def _deliver(self, pkt: Packet, stats: DirectionStats) -> None:
        stats.delivered += 1
        if pkt.on_deliver is not None:
            pkt.on_deliver(pkt, self.loop.now)

    def run(self, duration_s: float) -> None:
        self.loop.run(duration_s)
        for name, s in self.stats.items():
            logger.info(f"Replay {name}: {s.to_dict()}")


def run_replay(pair: ChannelPair, a: NodeId, b: NodeId, workloads: list[Any], duration_s: float) -> ReplayTransport:
    """Install workloads on a virtual-time replay harness and run it."""
    transport = ReplayTransport(pair, a, b)
    for workload in workloads:
        try:
            workload.install(transport)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"malformed workload {workload!r}: {e}") from e
    transport.run(duration_s)
    return transport
