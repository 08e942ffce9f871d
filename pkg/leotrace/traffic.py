"""Workloads and endpoint applications.

Background CBR flows, ping and a CUBIC speedtest. Applications only use the
PacketTransport interface, so the same objects run on the simulator and on a
replay channel pair.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence, TextIO

import numpy as np
from scipy.stats import truncnorm

from leotrace.errors import ConfigError, UsageError
from leotrace.netsim import PACKET_SIZE_BYTES, Packet, PacketClass, PacketTransport
from leotrace.topology import NodeId

logger = logging.getLogger(__name__)

MSS_BYTES = 1440
ACK_BYTES = 64
PING_TIMEOUT_S = 4.0
RTO_S = 1.0
DUPACK_THRESHOLD = 3
INITIAL_CWND_PKTS = 10.0

CUBIC_C = 0.4
CUBIC_BETA = 0.7


# ============================================================================
# Background flows
# ============================================================================


@dataclass(frozen=True)
class FlowSpec:
    id: int
    src_gs: NodeId
    dst_gs: NodeId
    rate_bps: float
    start_s: float
    duration_s: float

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


def generate_background_flows(
    n: int,
    rate_range: tuple[float, float],
    dur_range: tuple[float, float],
    peak_s: float,
    sigma_s: float | None,
    stations: Sequence[NodeId],
    seed: int,
    sim_duration_s: float,
) -> list[FlowSpec]:
    """Draw n flows whose start times follow a truncated normal around peak_s.

    Starts are truncated to [0, sim_duration_s - min duration]; rates and
    durations are uniform, endpoint pairs uniform over distinct stations.
    sigma_s defaults to sim_duration_s / 6.
    """
    if n <= 0:
        raise ConfigError("number of flows must be positive")
    if len(stations) < 2:
        raise ConfigError("background traffic needs at least two ground stations")
    lo_rate, hi_rate = rate_range
    lo_dur, hi_dur = dur_range
    if not 0 < lo_rate <= hi_rate:
        raise ConfigError(f"invalid rate range {rate_range}")
    if not 0 < lo_dur <= hi_dur:
        raise ConfigError(f"invalid duration range {dur_range}")
    sigma = sim_duration_s / 6.0 if sigma_s is None else sigma_s
    upper = sim_duration_s - lo_dur
    if sigma <= 0 or upper <= 0:
        raise ConfigError(
            f"cannot truncate start times to [0, {upper:.3f}] with sigma {sigma}"
        )

    rng = np.random.default_rng(seed)
    a, b = (0.0 - peak_s) / sigma, (upper - peak_s) / sigma
    starts = truncnorm.rvs(a, b, loc=peak_s, scale=sigma, size=n, random_state=rng)
    rates = rng.uniform(lo_rate, hi_rate, size=n)
    durations = rng.uniform(lo_dur, hi_dur, size=n)
    src = rng.integers(0, len(stations), size=n)
    dst = rng.integers(0, len(stations) - 1, size=n)
    dst = np.where(dst >= src, dst + 1, dst)

    order = np.argsort(starts, kind="stable")
    flows = [
        FlowSpec(
            id=i,
            src_gs=stations[int(src[j])],
            dst_gs=stations[int(dst[j])],
            rate_bps=float(round(rates[j])),
            start_s=round(float(starts[j]), 6),
            duration_s=round(float(durations[j]), 6),
        )
        for i, j in enumerate(order)
    ]
    logger.info(f"Generated {n} background flows (peak {peak_s}s, sigma {sigma:.2f}s, seed {seed})")
    return flows


FLOW_HEADER = ["id", "src_gs", "dst_gs", "rate_bps", "start_ms", "duration_ms"]


def write_flows_csv(flows: Sequence[FlowSpec], sink: TextIO) -> int:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(FLOW_HEADER)
    for f in flows:
        writer.writerow([
            f.id,
            f.src_gs.index,
            f.dst_gs.index,
            f"{f.rate_bps:.0f}",
            f"{f.start_s * 1000:.3f}",
            f"{f.duration_s * 1000:.3f}",
        ])
    return len(flows)


def read_flows_csv(source: TextIO) -> list[FlowSpec]:
    reader = csv.reader(source)
    header = next(reader, None)
    if header != FLOW_HEADER:
        raise ConfigError(f"flow file header must be {','.join(FLOW_HEADER)}")
    flows = []
    for lineno, row in enumerate(reader, start=2):
        try:
            flows.append(FlowSpec(
                id=int(row[0]),
                src_gs=NodeId.gs(int(row[1])),
                dst_gs=NodeId.gs(int(row[2])),
                rate_bps=float(row[3]),
                start_s=float(row[4]) / 1000.0,
                duration_s=float(row[5]) / 1000.0,
            ))
        except (ValueError, IndexError) as e:
            raise ConfigError(f"flow file line {lineno}: {e}") from e
    return flows


def active_flow_series(flows: Sequence[FlowSpec], duration_s: float, bin_s: float = 1.0) -> np.ndarray:
    """Number of flows active at the start of each bin."""
    t = np.arange(0.0, duration_s, bin_s)
    starts = np.sort([f.start_s for f in flows])
    ends = np.sort([f.end_s for f in flows])
    return np.searchsorted(starts, t, side="right") - np.searchsorted(ends, t, side="right")


def offered_load_series(flows: Sequence[FlowSpec], duration_s: float, bin_s: float = 1.0) -> np.ndarray:
    """Total configured background rate (bps) at the start of each bin."""
    t = np.arange(0.0, duration_s, bin_s)
    load = np.zeros_like(t)
    for f in flows:
        load[(t >= f.start_s) & (t < f.end_s)] += f.rate_bps
    return load


def cbr_schedule(flow: FlowSpec) -> np.ndarray:
    """Send times of a CBR flow: 1500 B every 1500*8/rate seconds, at least one."""
    if flow.rate_bps <= 0:
        raise UsageError(f"flow {flow.id} has non-positive rate")
    interval = PACKET_SIZE_BYTES * 8 / flow.rate_bps
    count = max(1, math.ceil(flow.duration_s / interval - 1e-9))
    return flow.start_s + interval * np.arange(count)


class BackgroundTraffic:
    """UDP-like constant bit rate flows (no feedback, no retransmission)."""

    def __init__(self, flows: Sequence[FlowSpec]):
        self.flows = list(flows)
        self.sent = 0

    def install(self, transport: PacketTransport) -> None:
        for flow in self.flows:
            for node in (flow.src_gs, flow.dst_gs):
                if not transport.has_endpoint(node):
                    raise ValueError(f"flow {flow.id} references unknown station {node}")
            interval = PACKET_SIZE_BYTES * 8 / flow.rate_bps
            count = max(1, math.ceil(flow.duration_s / interval - 1e-9))
            transport.loop.schedule(flow.start_s, self._emit, transport, flow, interval, count, 0)

    def _emit(self, transport: PacketTransport, flow: FlowSpec, interval: float, count: int, k: int) -> None:
        transport.send(PacketClass.BACKGROUND, flow.src_gs, flow.dst_gs, PACKET_SIZE_BYTES)
        self.sent += 1
        if k + 1 < count:
            transport.loop.schedule(flow.start_s + (k + 1) * interval, self._emit, transport, flow, interval, count, k + 1)

    def __repr__(self) -> str:
        return f"BackgroundTraffic({len(self.flows)} flows)"


# ============================================================================
# Ping
# ============================================================================


@dataclass
class PingRecord:
    seq: int
    send_s: float
    rtt_s: float | None = None

    @property
    def timed_out(self) -> bool:
        return self.rtt_s is None


class PingApp:
    """ICMP-echo-like probe: one request per interval, echoed on arrival."""

    def __init__(
        self,
        src: NodeId,
        dst: NodeId,
        interval_s: float = 0.5,
        payload_bytes: int = 64,
        start_s: float = 0.0,
        stop_s: float | None = None,
        timeout_s: float = PING_TIMEOUT_S,
    ):
        if interval_s <= 0:
            raise UsageError("ping interval must be positive")
        self.src = src
        self.dst = dst
        self.interval_s = interval_s
        self.payload_bytes = payload_bytes
        self.start_s = start_s
        self.stop_s = stop_s
        self.timeout_s = timeout_s
        self.records: list[PingRecord] = []
        self._transport: PacketTransport | None = None

    def install(self, transport: PacketTransport) -> None:
        for node in (self.src, self.dst):
            if not transport.has_endpoint(node):
                raise ValueError(f"ping endpoint {node} is not a station")
        self._transport = transport
        transport.loop.schedule(self.start_s, self._request, 0)

    def _request(self, seq: int) -> None:
        transport = self._transport
        now = transport.loop.now
        if self.stop_s is not None and now >= self.stop_s:
            return
        self.records.append(PingRecord(seq, now))
        transport.send(PacketClass.PROBE, self.src, self.dst, self.payload_bytes, payload=seq, on_deliver=self._echo)
        transport.loop.schedule(self.start_s + (seq + 1) * self.interval_s, self._request, seq + 1)

    def _echo(self, pkt: Packet, now: float) -> None:
        self._transport.send(PacketClass.PROBE, self.dst, self.src, self.payload_bytes, payload=pkt.payload, on_deliver=self._reply)

    def _reply(self, pkt: Packet, now: float) -> None:
        record = self.records[pkt.payload]
        rtt = now - record.send_s
        if rtt <= self.timeout_s and record.rtt_s is None:
            record.rtt_s = rtt

    def rtts(self) -> np.ndarray:
        """RTT per request in seconds, NaN for timeouts."""
        return np.array([math.nan if r.rtt_s is None else r.rtt_s for r in self.records])

    def write_csv(self, sink: TextIO) -> int:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["seq", "send_ms", "rtt_ms"])
        for r in self.records:
            writer.writerow([r.seq, f"{r.send_s * 1000:.3f}", "" if r.rtt_s is None else f"{r.rtt_s * 1000:.6f}"])
        return len(self.records)

    def __repr__(self) -> str:
        return f"PingApp({self.src}->{self.dst} every {self.interval_s}s)"


# ============================================================================
# CUBIC model
# ============================================================================


@dataclass(frozen=True)
class CcState:
    cwnd_pkts: float = INITIAL_CWND_PKTS
    ssthresh_pkts: float = math.inf
    w_max_pkts: float = 0.0
    epoch_start_s: float = 0.0
    rtt_estimate_s: float = 0.0
    in_slow_start: bool = True
    k_s: float = 0.0


@dataclass(frozen=True)
class Ack:
    packets: int = 1


@dataclass(frozen=True)
class Loss:
    pass


@dataclass(frozen=True)
class Timeout:
    pass


@dataclass(frozen=True)
class RttSample:
    rtt_s: float


CcEvent = Ack | Loss | Timeout | RttSample


def cubic_window(cc: CcState, t: float) -> float:
    """W(t) = C*(t - K)^3 + W_max, t measured from the epoch start."""
    dt = t - cc.epoch_start_s - cc.k_s
    return CUBIC_C * dt**3 + cc.w_max_pkts


def _new_epoch(cc: CcState, now: float) -> CcState:
    w_max = cc.cwnd_pkts
    ssthresh = max(CUBIC_BETA * w_max, 2.0)
    k = math.cbrt(max(w_max - ssthresh, 0.0) / CUBIC_C)
    return replace(
        cc,
        cwnd_pkts=ssthresh,
        ssthresh_pkts=ssthresh,
        w_max_pkts=w_max,
        epoch_start_s=now,
        in_slow_start=False,
        k_s=k,
    )


def tcp_model_step(cc: CcState, event: CcEvent, now: float) -> CcState:
    """Pure CUBIC transition function."""
    match event:
        case Ack(packets=n):
            if cc.in_slow_start:
                cwnd = cc.cwnd_pkts + n
                if cwnd < cc.ssthresh_pkts:
                    return replace(cc, cwnd_pkts=cwnd)
                return replace(
                    cc, cwnd_pkts=cc.ssthresh_pkts, w_max_pkts=cc.ssthresh_pkts,
                    epoch_start_s=now, in_slow_start=False, k_s=0.0,
                )
            return replace(cc, cwnd_pkts=max(1.0, cc.cwnd_pkts, cubic_window(cc, now)))
        case Loss():
            return _new_epoch(cc, now)
        case Timeout():
            return replace(_new_epoch(cc, now), cwnd_pkts=1.0, in_slow_start=True)
        case RttSample(rtt_s=rtt):
            est = rtt if cc.rtt_estimate_s == 0 else 0.875 * cc.rtt_estimate_s + 0.125 * rtt
            return replace(cc, rtt_estimate_s=est)
    raise UsageError(f"unknown congestion control event {event!r}")


# ============================================================================
# Speedtest
# ============================================================================


@dataclass
class SpeedtestLog:
    deliveries: list[tuple[float, int]] = field(default_factory=list)
    cwnd: list[tuple[float, float]] = field(default_factory=list)
    transmitted_bytes: int = 0
    retransmissions: int = 0

    @property
    def delivered_bytes(self) -> int:
        return sum(b for _, b in self.deliveries)


class SpeedtestApp:
    """Greedy bulk sender driven by tcp_model_step, go-back-N retransmission.

    The receiver keeps out-of-order segments and acknowledges every arrival
    with its cumulative point. Three duplicate ACKs or the RTO move the send
    point back to the first unacknowledged segment and everything from there
    on is sent again. Goodput counts each segment once, when it first arrives.
    """

    def __init__(self, src: NodeId, dst: NodeId, start_s: float = 0.0, duration_s: float | None = None):
        self.src = src
        self.dst = dst
        self.start_s = start_s
        self.duration_s = duration_s
        self.cc = CcState()
        self.log = SpeedtestLog()
        self._transport: PacketTransport | None = None
        # sender
        self._snd_una = 0
        self._snd_nxt = 0
        self._snd_max = 0
        self._tx_count = 0
        self._goback_tx = 0
        self._recover = 0
        self._dupacks = 0
        self._rto_deadline = math.inf
        self._timer_armed = False
        # receiver
        self._rcv_next = 0
        self._rcv_buffer: set[int] = set()

    def install(self, transport: PacketTransport) -> None:
        for node in (self.src, self.dst):
            if not transport.has_endpoint(node):
                raise ValueError(f"speedtest endpoint {node} is not a station")
        self._transport = transport
        transport.loop.schedule(self.start_s, self._start)

    @property
    def stop_s(self) -> float:
        return math.inf if self.duration_s is None else self.start_s + self.duration_s

    @property
    def in_flight_pkts(self) -> int:
        return self._snd_nxt - self._snd_una

    def _start(self) -> None:
        self._record_cwnd()
        self._fill()

    def _record_cwnd(self) -> None:
        self.log.cwnd.append((self._transport.loop.now, self.cc.cwnd_pkts))

    def _send(self, seq: int) -> None:
        transport = self._transport
        transport.send(
            PacketClass.TRANSPORT, self.src, self.dst, PACKET_SIZE_BYTES,
            payload=(seq, transport.loop.now, self._tx_count), on_deliver=self._on_data,
        )
        self._tx_count += 1
        self.log.transmitted_bytes += MSS_BYTES
        if seq < self._snd_max:
            self.log.retransmissions += 1

    def _fill(self) -> None:
        now = self._transport.loop.now
        if now >= self.stop_s:
            return
        while self.in_flight_pkts < math.floor(self.cc.cwnd_pkts):
            self._send(self._snd_nxt)
            self._snd_nxt += 1
            self._snd_max = max(self._snd_max, self._snd_nxt)
        self._arm_timer(now)

    def _go_back(self) -> None:
        """Resend everything from the first unacknowledged segment."""
        self._snd_nxt = self._snd_una
        self._goback_tx = self._tx_count
        self._dupacks = 0

    # -- RTO ------------------------------------------------------------------

    def _arm_timer(self, now: float) -> None:
        if self._snd_max == self._snd_una:
            self._rto_deadline = math.inf
            return
        if self._rto_deadline == math.inf:
            self._rto_deadline = now + RTO_S
        if not self._timer_armed:
            self._timer_armed = True
            self._transport.loop.schedule(self._rto_deadline, self._on_timer)

    def _on_timer(self) -> None:
        self._timer_armed = False
        now = self._transport.loop.now
        if self._rto_deadline == math.inf:
            return
        if now < self._rto_deadline:
            self._timer_armed = True
            self._transport.loop.schedule(self._rto_deadline, self._on_timer)
            return
        self.cc = tcp_model_step(self.cc, Timeout(), now)
        self._record_cwnd()
        self._recover = self._snd_max
        self._go_back()
        self._rto_deadline = now + RTO_S
        self._fill()

    # -- receiver -------------------------------------------------------------

    def _on_data(self, pkt: Packet, now: float) -> None:
        seq, sent_s, tx = pkt.payload
        if seq >= self._rcv_next and seq not in self._rcv_buffer:
            self.log.deliveries.append((now, MSS_BYTES))
            self._rcv_buffer.add(seq)
            while self._rcv_next in self._rcv_buffer:
                self._rcv_buffer.discard(self._rcv_next)
                self._rcv_next += 1
        self._transport.send(
            PacketClass.TRANSPORT, self.dst, self.src, ACK_BYTES,
            payload=(self._rcv_next, sent_s, seq, tx), on_deliver=self._on_ack,
        )

    # -- sender ---------------------------------------------------------------

    def _on_ack(self, pkt: Packet, now: float) -> None:
        ack, sent_s, data_seq, tx = pkt.payload
        if ack > self._snd_una:
            newly = ack - self._snd_una
            self._snd_una = ack
            self._snd_nxt = max(self._snd_nxt, ack)
            self._dupacks = 0
            self.cc = tcp_model_step(self.cc, RttSample(now - sent_s), now)
            self.cc = tcp_model_step(self.cc, Ack(newly), now)
            self._record_cwnd()
            self._rto_deadline = now + RTO_S if self._snd_max > self._snd_una else math.inf
            self._fill()
            return
        if ack < self._snd_una or self._snd_max == self._snd_una:
            return
        # copies sent before the last go-back, or below the cumulative point, say nothing new
        if tx < self._goback_tx or data_seq <= ack:
            return
        self._dupacks += 1
        if self._dupacks < DUPACK_THRESHOLD:
            return
        # one window reduction per loss episode
        if self._snd_una >= self._recover:
            self.cc = tcp_model_step(self.cc, Loss(), now)
            self._record_cwnd()
            self._recover = self._snd_max
        self._go_back()
        self._fill()

    def __repr__(self) -> str:
        return f"SpeedtestApp({self.src}->{self.dst})"
