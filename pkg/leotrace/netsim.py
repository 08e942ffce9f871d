"""Deterministic packet-level discrete-event simulator.

Interfaces are FIFO drop-tail queues. Real packets pay serialization and
position-exact propagation delay; trace packets are virtual (zero size, no
transmission time, never counted against queue capacity). GSLs can be gated
by handover loss windows and periodic global reconfiguration pauses.
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Callable, Iterable, Protocol, Sequence, TextIO

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from leotrace.errors import ConfigError
from leotrace.geom import (
    SPEED_OF_LIGHT_M_S,
    ConstellationSpec,
    GroundStation,
    ground_station_positions,
    satellite_positions,
)
from leotrace.topology import (
    LinkKind,
    NodeId,
    NodeKind,
    compute_forwarding_state,
    epoch_count,
    floyd_warshall,
    link_between,
    node_at,
    node_index,
    route_id,
)

logger = logging.getLogger(__name__)

PACKET_SIZE_BYTES = 1500
UTILIZATION_WINDOW_S = 0.010


class PacketClass(str, Enum):
    BACKGROUND = "background"
    PROBE = "probe"
    TRANSPORT = "transport"
    TRACE_VIRTUAL = "trace_virtual"


RESERVED_CLASSES = frozenset({PacketClass.PROBE, PacketClass.TRANSPORT})


class DropReason(str, Enum):
    QUEUE = "queue"
    HANDOVER = "handover"
    NO_GSL = "no_gsl"
    IN_FLIGHT = "in_flight"


class Verdict(str, Enum):
    ACCEPTED = "accepted"
    DROPPED = "dropped"


class HandoverGate(str, Enum):
    OPEN = "open"
    DROPPING = "dropping"


class ReconfigGate(str, Enum):
    TRANSMITTING = "transmitting"
    PAUSED = "paused"


@dataclass(slots=True, eq=False)
class Packet:
    id: int
    cls: PacketClass
    src: NodeId
    dst: NodeId
    size_bytes: int
    created_s: float
    payload: Any = None
    on_deliver: Callable[["Packet", float], None] | None = None
    hops: list[int] = field(default_factory=list)
    # trace packets: per hop (available bps at dequeue, queue headroom at arrival)
    observations: list[tuple[float, int]] | None = None

    @property
    def is_virtual(self) -> bool:
        return self.cls is PacketClass.TRACE_VIRTUAL


# ============================================================================
# Configuration
# ============================================================================


class SimConfig(BaseModel):
    """Full-simulation parameters."""

    model_config = ConfigDict(frozen=True)

    spec: ConstellationSpec
    stations: tuple[GroundStation, ...]
    fs_interval_s: float = Field(default=0.1, gt=0)
    duration_s: float = Field(default=200.0, gt=0)
    handover_loss_s: float = Field(default=0.0, ge=0)
    reconfig_interval_s: float = Field(default=0.0, ge=0)
    reconfig_duration_s: float = Field(default=0.0, ge=0)
    gsl_reservation: dict[int, float] = Field(default_factory=dict)
    seed: int = Field(default=0, ge=0, lt=2**64)
    utilization_window_s: float = Field(default=UTILIZATION_WINDOW_S, gt=0)
    position_cache_s: float = Field(default=0.001, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "SimConfig":
        for position, gs in enumerate(self.stations):
            if gs.id != position:
                raise ValueError(f"ground station ids must be 0..G-1 in file order (found id {gs.id} at {position})")
        if self.reconfig_interval_s > 0 and not self.reconfig_duration_s < self.reconfig_interval_s:
            raise ValueError("reconfig_duration_s must be shorter than reconfig_interval_s")
        for station, bps in self.gsl_reservation.items():
            if not 0 <= station < len(self.stations):
                raise ValueError(f"reservation for unknown station {station}")
            if not 0 <= bps <= self.spec.gsl_rate_bps:
                raise ValueError(f"reservation {bps} bps exceeds GSL rate for station {station}")
        return self


class Gates:
    """Handover loss windows and periodic reconfiguration pauses for GSLs."""

    def __init__(self, handover_loss_s: float = 0.0, reconfig_interval_s: float = 0.0, reconfig_duration_s: float = 0.0):
        self.handover_loss_s = handover_loss_s
        self.reconfig_interval_s = reconfig_interval_s
        self.reconfig_duration_s = reconfig_duration_s
        self._windows: dict[tuple[int, int], tuple[float, float]] = {}

    def open_handover(self, u: int, v: int, epoch_s: float) -> None:
        """Start a loss window on both directions of GSL (u, v)."""
        if self.handover_loss_s <= 0:
            return
        window = (epoch_s, epoch_s + self.handover_loss_s)
        self._windows[(u, v)] = window
        self._windows[(v, u)] = window

    def handover_gate(self, u: int, v: int, t: float) -> HandoverGate:
        window = self._windows.get((u, v))
        if window is not None and window[0] <= t < window[1]:
            return HandoverGate.DROPPING
        return HandoverGate.OPEN

    def reconfiguration_gate(self, t: float) -> ReconfigGate:
        """GSLs pause on [k*I, k*I + D) for k >= 1."""
        interval = self.reconfig_interval_s
        if interval <= 0:
            return ReconfigGate.TRANSMITTING
        k = math.floor(t / interval)
        if k >= 1 and t - k * interval < self.reconfig_duration_s:
            return ReconfigGate.PAUSED
        return ReconfigGate.TRANSMITTING

    def reconfig_resume_times(self, duration_s: float) -> list[float]:
        if self.reconfig_interval_s <= 0:
            return []
        times = []
        k = 1
        while k * self.reconfig_interval_s < duration_s:
            times.append(k * self.reconfig_interval_s + self.reconfig_duration_s)
            k += 1
        return times


# ============================================================================
# Event loop
# ============================================================================


class EventLoop:
    """Heap of (time, sequence) ordered callbacks."""

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, Callable[..., None], tuple]] = []
        self._seq = 0
        self.processed = 0

    def schedule(self, t: float, fn: Callable[..., None], *args: Any) -> None:
        if t < self.now:
            t = self.now
        heapq.heappush(self._heap, (t, self._seq, fn, args))
        self._seq += 1

    def run(self, until: float) -> None:
        heap = self._heap
        while heap and heap[0][0] < until:
            t, _, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)
            self.processed += 1
        self.now = max(self.now, until)

    def __len__(self) -> int:
        return len(self._heap)


# ============================================================================
# Interfaces
# ============================================================================


class Interface:
    """Egress queue and transmitter of one directed link."""

    def __init__(
        self,
        sim: "Simulator",
        u: int,
        v: int,
        kind: LinkKind,
        rate_bps: float,
        queue_capacity_pkts: int,
        reservation_bps: float = 0.0,
    ):
        self.sim = sim
        self.u = u
        self.v = v
        self.kind = kind
        self.rate_bps = rate_bps
        self.queue_capacity_pkts = queue_capacity_pkts
        self.reservation_bps = reservation_bps
        self.queue: deque[Packet] = deque()
        self.real_count = 0
        self.busy_until = 0.0
        self.transmitting = False
        self.deferred_until = -math.inf
        # (start, finish, bits, is_background)
        self.tx_log: deque[tuple[float, float, float, bool]] = deque()

    @property
    def is_gsl(self) -> bool:
        return self.kind is LinkKind.GSL

    def enqueue(self, pkt: Packet, now: float) -> Verdict:
        """Drop-tail admission; virtual packets mirror the real-packet rule."""
        if self.real_count >= self.queue_capacity_pkts:
            return Verdict.DROPPED
        if pkt.is_virtual:
            if pkt.observations is not None:
                pkt.observations.append((math.nan, self.queue_capacity_pkts - self.real_count))
        else:
            self.real_count += 1
        self.queue.append(pkt)
        return Verdict.ACCEPTED

    def effective_rate(self, now: float) -> float:
        if self.is_gsl and self.sim.gates.reconfiguration_gate(now) is ReconfigGate.PAUSED:
            return 0.0
        return self.rate_bps

    def serialize(self, pkt: Packet, start: float) -> float | None:
        """Finish time of pkt starting at `start`; None while the link rate is 0."""
        if pkt.is_virtual:
            return start
        rate = self.effective_rate(start)
        if rate <= 0:
            return None
        bits = pkt.size_bytes * 8
        finish = start + bits / rate
        self.busy_until = finish
        self.tx_log.append((start, finish, bits, pkt.cls is PacketClass.BACKGROUND))
        return finish

    def _window_bits(self, now: float) -> tuple[float, float]:
        """(total bits, background bits) serialized within (now - W, now]."""
        lo = now - self.sim.window_s
        log = self.tx_log
        while log and log[0][1] <= lo:
            log.popleft()
        total = background = 0.0
        for start, finish, bits, is_bg in log:
            if start >= now:
                break
            overlap = min(finish, now) - max(start, lo)
            if overlap <= 0:
                continue
            share = bits * overlap / (finish - start)
            total += share
            if is_bg:
                background += share
        return total, background

    def available_bandwidth(self, now: float, cls: PacketClass = PacketClass.PROBE) -> float:
        """Unused capacity over the last utilization window, in bps."""
        window = self.sim.window_s
        total, background = self._window_bits(now)
        avail = max(0.0, self.rate_bps - total / window)
        if self.reservation_bps > 0 and cls is not PacketClass.BACKGROUND:
            reserved_left = self.reservation_bps - (total - background) / window
            avail = max(avail, reserved_left)
        return min(avail, self.rate_bps)

    def _background_delay(self, pkt: Packet, now: float) -> float:
        """Seconds a background packet must wait to respect the GSL reservation."""
        limit_bps = self.rate_bps - self.reservation_bps
        bits = pkt.size_bytes * 8
        window = self.sim.window_s
        budget = max(limit_bps * window, bits)
        _, background = self._window_bits(now)
        excess = background + bits - budget
        if excess <= 0:
            return 0.0
        drain_bps = max(limit_bps, bits / window)
        return max(excess / drain_bps, 1e-6)

    def kick(self, now: float) -> None:
        """Start the next transmission if the link is free."""
        if self.transmitting:
            return
        sim = self.sim
        queue = self.queue
        while queue:
            index = 0
            head = queue[0]
            if self.reservation_bps > 0 and head.cls is PacketClass.BACKGROUND:
                wait = self._background_delay(head, now)
                if wait > 0:
                    # reserved classes and trace packets pass background held back by the reservation
                    index = next((i for i, p in enumerate(queue) if p.is_virtual or p.cls in RESERVED_CLASSES), -1)
                    if index < 0:
                        if self.deferred_until <= now:
                            self.deferred_until = now + wait
                            sim.loop.schedule(self.deferred_until, self.kick_at_deferred)
                        return
                    head = queue[index]
            if head.is_virtual:
                if self.effective_rate(now) <= 0:
                    return
                del queue[index]
                sim.depart_virtual(self, head, now)
                continue
            finish = self.serialize(head, now)
            if finish is None:
                return
            del queue[index]
            self.real_count -= 1
            self.transmitting = True
            sim.depart_real(self, head, now, finish)
            return

    def kick_at_deferred(self) -> None:
        self.kick(self.sim.loop.now)

    def tx_done(self) -> None:
        self.transmitting = False
        self.kick(self.sim.loop.now)


# ============================================================================
# Networks
# ============================================================================


class Network(Protocol):
    """Routing and link properties consumed by the simulator."""

    num_nodes: int

    def node_id(self, index: int) -> NodeId: ...

    def index(self, node: NodeId) -> int: ...

    def next_hop(self, u: int, dst: int) -> int: ...

    def link_delay(self, u: int, v: int, t: float) -> float: ...

    def make_interface(self, sim: "Simulator", u: int, v: int) -> Interface: ...

    def start(self, sim: "Simulator", duration_s: float) -> None: ...


class PositionCache:
    """Node positions sampled every `step_s`, linearly interpolated."""

    def __init__(self, spec: ConstellationSpec, stations: Sequence[GroundStation], step_s: float):
        self.spec = spec
        self.stations = tuple(stations)
        self.step_s = step_s
        self._sample = lru_cache(maxsize=16)(self._compute)

    def _compute(self, k: int) -> list[list[float]]:
        t = k * self.step_s
        pos = np.vstack((satellite_positions(self.spec, t), ground_station_positions(self.stations, t)))
        return pos.tolist()

    def distance(self, u: int, v: int, t: float) -> float:
        k = int(t // self.step_s)
        frac = t / self.step_s - k
        p0 = self._sample(k)
        p1 = self._sample(k + 1)
        a0, a1, b0, b1 = p0[u], p1[u], p0[v], p1[v]
        dx = (a0[0] + (a1[0] - a0[0]) * frac) - (b0[0] + (b1[0] - b0[0]) * frac)
        dy = (a0[1] + (a1[1] - a0[1]) * frac) - (b0[1] + (b1[1] - b0[1]) * frac)
        dz = (a0[2] + (a1[2] - a0[2]) * frac) - (b0[2] + (b1[2] - b0[2]) * frac)
        return math.sqrt(dx * dx + dy * dy + dz * dz)


class ConstellationNetwork:
    """Walker-delta constellation with epoch-based forwarding states."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.spec = config.spec
        self.stations = config.stations
        self.num_sats = self.spec.num_satellites
        self.num_nodes = self.num_sats + len(self.stations)
        self.positions = PositionCache(self.spec, self.stations, config.position_cache_s)
        self._next: list[list[int]] = []
        self._station_first: np.ndarray | None = None
        self._station_last: np.ndarray | None = None
        self.epochs = 0
        self.handovers = 0

    def node_id(self, index: int) -> NodeId:
        return node_at(index, self.num_sats)

    def index(self, node: NodeId) -> int:
        return node_index(node, self.num_sats)

    def next_hop(self, u: int, dst: int) -> int:
        return self._next[u][dst]

    def link_delay(self, u: int, v: int, t: float) -> float:
        return self.positions.distance(u, v, t) / SPEED_OF_LIGHT_M_S

    def make_interface(self, sim: "Simulator", u: int, v: int) -> Interface:
        kind = LinkKind.ISL if u < self.num_sats and v < self.num_sats else LinkKind.GSL
        if kind is LinkKind.ISL:
            return Interface(sim, u, v, kind, self.spec.isl_rate_bps, self.spec.isl_queue_pkts)
        station = (u if u >= self.num_sats else v) - self.num_sats
        reservation = self.config.gsl_reservation.get(station, 0.0)
        return Interface(sim, u, v, kind, self.spec.gsl_rate_bps, self.spec.gsl_queue_pkts, reservation)

    def start(self, sim: "Simulator", duration_s: float) -> None:
        self._apply_epoch(sim, 0)
        for k in range(1, epoch_count(self.config.fs_interval_s, duration_s)):
            sim.loop.schedule(k * self.config.fs_interval_s, self._apply_epoch, sim, k)

    def _apply_epoch(self, sim: "Simulator", k: int) -> None:
        t = k * self.config.fs_interval_s
        fs = compute_forwarding_state(self.spec, self.stations, t)
        first, last = station_gsl_ends(fs.next_index, self.num_sats)
        if self._station_first is not None:
            self._open_handovers(sim, t, first, last)
        self._station_first, self._station_last = first, last
        self._next = fs.next_index.tolist()
        self.epochs += 1
        for iface in sim.interfaces.values():
            iface.kick(sim.loop.now)

    def _open_handovers(self, sim: "Simulator", t: float, first: np.ndarray, last: np.ndarray) -> None:
        n_sat = self.num_sats
        had_path = self._station_first >= 0
        has_path = first >= 0
        src_moved = had_path & has_path & (first != self._station_first)
        dst_moved = had_path & has_path & (last != self._station_last)
        for g, d in np.argwhere(src_moved):
            sim.gates.open_handover(n_sat + int(g), int(first[g, d]), t)
            self.handovers += 1
        for g, d in np.argwhere(dst_moved):
            sim.gates.open_handover(int(last[g, d]), n_sat + int(d), t)
            self.handovers += 1


def station_gsl_ends(next_index: np.ndarray, num_sats: int) -> tuple[np.ndarray, np.ndarray]:
    """First-hop and last-hop satellites of every station-to-station path.

    Returns two (G, G) arrays holding satellite indices, -1 where no path
    exists (or src == dst).
    """
    n = next_index.shape[0]
    cols = np.broadcast_to(np.arange(n), (n, n))
    # last[x, d]: node adjacent to d on the path x -> d
    last = np.where(next_index == cols, np.arange(n)[:, None], -1)
    for _ in range(n):
        hop = next_index
        pending = (last < 0) & (hop >= 0)
        if not pending.any():
            break
        candidate = last[np.where(hop >= 0, hop, 0), cols]
        updated = np.where(pending, candidate, last)
        if np.array_equal(updated, last):
            break
        last = updated
    gs = slice(num_sats, n)
    first = next_index[gs, gs].astype(np.int64)
    last_hop = last[gs, gs].astype(np.int64)
    first = np.where(first < num_sats, first, -1)
    last_hop = np.where((last_hop >= 0) & (last_hop < num_sats) & (first >= 0), last_hop, -1)
    return first, last_hop


@dataclass(frozen=True)
class LinkSpec:
    rate_bps: float
    delay_s: float
    queue_capacity_pkts: int
    reservation_bps: float = 0.0


class StaticNetwork:
    """Fixed links with constant delays; routes minimize total delay."""

    def __init__(self, nodes: Sequence[NodeId], links: dict[tuple[NodeId, NodeId], LinkSpec]):
        self.nodes = list(nodes)
        self.num_nodes = len(self.nodes)
        self._index = {node: i for i, node in enumerate(self.nodes)}
        self._links = {(self._index[a], self._index[b]): spec for (a, b), spec in links.items()}
        weights = np.full((self.num_nodes, self.num_nodes), np.inf)
        for (u, v), spec in self._links.items():
            weights[u, v] = spec.delay_s
        _, nxt = floyd_warshall(weights)
        self._next = nxt.tolist()

    def node_id(self, index: int) -> NodeId:
        return self.nodes[index]

    def index(self, node: NodeId) -> int:
        return self._index[node]

    def next_hop(self, u: int, dst: int) -> int:
        return self._next[u][dst]

    def link_delay(self, u: int, v: int, t: float) -> float:
        return self._links[(u, v)].delay_s

    def make_interface(self, sim: "Simulator", u: int, v: int) -> Interface:
        spec = self._links[(u, v)]
        kind = link_between(self.nodes[u], self.nodes[v]).kind
        return Interface(sim, u, v, kind, spec.rate_bps, spec.queue_capacity_pkts, spec.reservation_bps)

    def start(self, sim: "Simulator", duration_s: float) -> None:
        pass


def single_link_network(rate_bps: float, delay_s: float, queue_capacity_pkts: int) -> StaticNetwork:
    """Two stations joined by one bidirectional link."""
    a, b = NodeId.gs(0), NodeId.gs(1)
    spec = LinkSpec(rate_bps, delay_s, queue_capacity_pkts)
    return StaticNetwork([a, b], {(a, b): spec, (b, a): spec})


# ============================================================================
# Delivery log
# ============================================================================


@dataclass(slots=True)
class DeliveryRecord:
    packet_id: int
    cls: PacketClass
    src: NodeId
    dst: NodeId
    created_s: float
    delivered_s: float | None = None
    drop_reason: DropReason | None = None
    route_id: int | None = None


class DeliveryLog:
    """Outcome of every real packet created during a run."""

    HEADER = ["packet_id", "class", "src", "dst", "created_ms", "delivered_ms", "drop_reason", "route_id"]

    def __init__(self) -> None:
        self.records: dict[int, DeliveryRecord] = {}

    def created(self, pkt: Packet) -> None:
        self.records[pkt.id] = DeliveryRecord(pkt.id, pkt.cls, pkt.src, pkt.dst, pkt.created_s)

    def delivered(self, pkt: Packet, now: float, rid: int) -> None:
        rec = self.records[pkt.id]
        rec.delivered_s = now
        rec.route_id = rid

    def dropped(self, pkt: Packet, reason: DropReason) -> None:
        self.records[pkt.id].drop_reason = reason

    def finalize(self) -> None:
        for rec in self.records.values():
            if rec.delivered_s is None and rec.drop_reason is None:
                rec.drop_reason = DropReason.IN_FLIGHT

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records[k] for k in sorted(self.records))

    def counts(self) -> dict[str, int]:
        counts = {"delivered": 0}
        for rec in self.records.values():
            key = "delivered" if rec.delivered_s is not None else rec.drop_reason.value
            counts[key] = counts.get(key, 0) + 1
        return counts

    def write_csv(self, sink: TextIO) -> int:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(self.HEADER)
        for rec in self:
            writer.writerow([
                rec.packet_id,
                rec.cls.value,
                rec.src,
                rec.dst,
                f"{rec.created_s * 1000:.6f}",
                "" if rec.delivered_s is None else f"{rec.delivered_s * 1000:.6f}",
                "" if rec.drop_reason is None else rec.drop_reason.value,
                "" if rec.route_id is None else f"{rec.route_id:016x}",
            ])
        return len(self.records)


# ============================================================================
# Simulator
# ============================================================================


class TraceObserver(Protocol):
    """Receives the fate of virtual trace packets."""

    def on_delivered(self, pkt: Packet, now: float, rid: int) -> None: ...

    def on_dropped(self, pkt: Packet, now: float, reason: DropReason) -> None: ...


class Workload(Protocol):
    def install(self, transport: "PacketTransport") -> None: ...


class PacketTransport(Protocol):
    """What endpoint applications need from a network or a replay channel."""

    loop: EventLoop

    def send(
        self,
        cls: PacketClass,
        src: NodeId,
        dst: NodeId,
        size_bytes: int,
        payload: Any = None,
        on_deliver: Callable[[Packet, float], None] | None = None,
    ) -> Packet | None: ...

    def has_endpoint(self, node: NodeId) -> bool: ...


class Simulator:
    """Event-driven packet forwarding over a Network."""

    def __init__(
        self,
        network: Network,
        gates: Gates | None = None,
        window_s: float = UTILIZATION_WINDOW_S,
        observer: TraceObserver | None = None,
    ):
        self.network = network
        self.gates = gates or Gates()
        self.window_s = window_s
        self.observer = observer
        self.loop = EventLoop()
        self.log = DeliveryLog()
        self.interfaces: dict[tuple[int, int], Interface] = {}
        self._next_id = 0
        self._next_virtual_id = 0

    # -- transport API ------------------------------------------------------

    def has_endpoint(self, node: NodeId) -> bool:
        try:
            index = self.network.index(node)
        except (KeyError, ValueError):
            return False
        return 0 <= index < self.network.num_nodes and node.kind is NodeKind.GROUND_STATION

    def send(
        self,
        cls: PacketClass,
        src: NodeId,
        dst: NodeId,
        size_bytes: int,
        payload: Any = None,
        on_deliver: Callable[[Packet, float], None] | None = None,
    ) -> Packet:
        now = self.loop.now
        if cls is PacketClass.TRACE_VIRTUAL:
            pkt = Packet(self._next_virtual_id, cls, src, dst, 0, now, payload, on_deliver, observations=[])
            self._next_virtual_id += 1
        else:
            if size_bytes <= 0:
                raise ValueError("real packets need a positive size")
            pkt = Packet(self._next_id, cls, src, dst, size_bytes, now, payload, on_deliver)
            self._next_id += 1
            self.log.created(pkt)
        self.arrive(pkt, self.network.index(src))
        return pkt

    # -- forwarding ---------------------------------------------------------

    def interface(self, u: int, v: int) -> Interface:
        iface = self.interfaces.get((u, v))
        if iface is None:
            iface = self.network.make_interface(self, u, v)
            self.interfaces[(u, v)] = iface
        return iface

    def arrive(self, pkt: Packet, u: int) -> None:
        now = self.loop.now
        pkt.hops.append(u)
        network = self.network
        dst = network.index(pkt.dst)
        if u == dst:
            self._deliver(pkt, now)
            return
        v = network.next_hop(u, dst)
        if v < 0:
            self._drop(pkt, now, DropReason.NO_GSL)
            return
        iface = self.interface(u, v)
        if iface.is_gsl and self.gates.handover_gate(u, v, now) is HandoverGate.DROPPING:
            self._drop(pkt, now, DropReason.HANDOVER)
            return
        if iface.enqueue(pkt, now) is Verdict.DROPPED:
            self._drop(pkt, now, DropReason.QUEUE)
            return
        iface.kick(now)

    def depart_real(self, iface: Interface, pkt: Packet, start: float, finish: float) -> None:
        prop = self.network.link_delay(iface.u, iface.v, start)
        self.loop.schedule(finish, iface.tx_done)
        self.loop.schedule(finish + prop, self.arrive, pkt, iface.v)

    def depart_virtual(self, iface: Interface, pkt: Packet, now: float) -> None:
        if pkt.observations:
            _, headroom = pkt.observations[-1]
            pkt.observations[-1] = (iface.available_bandwidth(now, PacketClass.PROBE), headroom)
        prop = self.network.link_delay(iface.u, iface.v, now)
        self.loop.schedule(now + prop, self.arrive, pkt, iface.v)

    def _deliver(self, pkt: Packet, now: float) -> None:
        nodes = [self.network.node_id(i) for i in pkt.hops]
        rid = route_id(nodes)
        if pkt.is_virtual:
            if self.observer is not None:
                self.observer.on_delivered(pkt, now, rid)
        else:
            self.log.delivered(pkt, now, rid)
        if pkt.on_deliver is not None:
            pkt.on_deliver(pkt, now)

    def _drop(self, pkt: Packet, now: float, reason: DropReason) -> None:
        if pkt.is_virtual:
            if self.observer is not None:
                self.observer.on_dropped(pkt, now, reason)
        else:
            self.log.dropped(pkt, reason)

    # -- run ----------------------------------------------------------------

    def _resume_gsls(self) -> None:
        now = self.loop.now
        for iface in self.interfaces.values():
            if iface.is_gsl and iface.queue:
                iface.kick(now)

    def run(self, duration_s: float) -> DeliveryLog:
        self.network.start(self, duration_s)
        for t in self.gates.reconfig_resume_times(duration_s):
            self.loop.schedule(t, self._resume_gsls)
        self.loop.run(duration_s)
        self.log.finalize()
        logger.info(
            f"Simulated {duration_s:.1f}s: {self.loop.processed} events, "
            f"{len(self.log)} real packets {self.log.counts()}"
        )
        return self.log


@dataclass
class SimulationResult:
    log: DeliveryLog
    simulator: Simulator
    workloads: list[Any]


def build_simulator(config: SimConfig, observer: TraceObserver | None = None) -> Simulator:
    gates = Gates(config.handover_loss_s, config.reconfig_interval_s, config.reconfig_duration_s)
    return Simulator(ConstellationNetwork(config), gates, config.utilization_window_s, observer)


def run_simulation(
    config: SimConfig,
    workloads: Iterable[Workload] = (),
    tracer: Any = None,
) -> SimulationResult:
    """Run the full simulation with the given applications and optional tracer.

    Identical (config, workloads) always produce byte-identical delivery logs.
    """
    sim = build_simulator(config, tracer)
    workloads = list(workloads)
    for workload in workloads:
        try:
            workload.install(sim)
        except (KeyError, ValueError, IndexError) as e:
            raise ConfigError(f"malformed workload {workload!r}: {e}") from e
    if tracer is not None:
        tracer.install(sim, config.duration_s, config.seed)
    log = sim.run(config.duration_s)
    return SimulationResult(log, sim, workloads)
