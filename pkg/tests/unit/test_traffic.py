"""Background flows, ping, the CUBIC model and the speedtest application."""

from __future__ import annotations

import io
import itertools
import math

import numpy as np
import pytest
from scipy.stats import kstest, truncnorm

from leotrace.errors import ConfigError, UsageError
from leotrace.metrics import goodput_series
from leotrace.netsim import EventLoop, LinkSpec, Packet, Simulator, StaticNetwork, single_link_network
from leotrace.topology import NodeId
from leotrace.traffic import (
    CUBIC_BETA,
    Ack,
    CcState,
    FlowSpec,
    Loss,
    PingApp,
    RttSample,
    SpeedtestApp,
    Timeout,
    active_flow_series,
    cbr_schedule,
    cubic_window,
    generate_background_flows,
    offered_load_series,
    read_flows_csv,
    tcp_model_step,
    write_flows_csv,
)

GS0, GS1 = NodeId.gs(0), NodeId.gs(1)
STATIONS = [NodeId.gs(i) for i in range(10)]


def _flows(n: int = 2000, seed: int = 1, **overrides):
    params = dict(
        n=n,
        rate_range=(0.1e6, 2e6),
        dur_range=(10.0, 15.0),
        peak_s=100.0,
        sigma_s=None,
        stations=STATIONS,
        seed=seed,
        sim_duration_s=200.0,
    )
    params.update(overrides)
    return generate_background_flows(**params)


# ============================================================================
# Background flows
# ============================================================================


def test_start_times_fit_truncated_normal():
    flows = _flows()
    sigma = 200.0 / 6.0
    a, b = (0.0 - 100.0) / sigma, (190.0 - 100.0) / sigma
    starts = np.array([f.start_s for f in flows])
    result = kstest(starts, truncnorm(a, b, loc=100.0, scale=sigma).cdf)
    assert result.pvalue > 0.01


def test_flow_parameters_in_range():
    flows = _flows(500)
    assert [f.id for f in flows] == list(range(500))
    assert all(0.1e6 <= f.rate_bps <= 2e6 for f in flows)
    assert all(10.0 <= f.duration_s <= 15.0 for f in flows)
    assert all(0.0 <= f.start_s <= 190.0 for f in flows)
    assert all(f.src_gs != f.dst_gs for f in flows)
    starts = [f.start_s for f in flows]
    assert starts == sorted(starts)
    assert {f.src_gs for f in flows} == set(STATIONS)


def test_flows_are_reproducible_per_seed():
    assert _flows(100, seed=5) == _flows(100, seed=5)
    assert _flows(100, seed=5) != _flows(100, seed=6)


@pytest.mark.parametrize(
    "overrides",
    [
        {"n": 0},
        {"stations": STATIONS[:1]},
        {"rate_range": (2e6, 1e6)},
        {"dur_range": (0.0, 1.0)},
        {"sim_duration_s": 5.0},
    ],
    ids=["no-flows", "one-station", "rate-order", "zero-duration", "too-short"],
)
def test_flow_generation_rejects(overrides):
    with pytest.raises(ConfigError):
        _flows(**overrides)


def test_flow_file_round_trip():
    flows = _flows(50)
    buf = io.StringIO()
    assert write_flows_csv(flows, buf) == 50
    buf.seek(0)
    back = read_flows_csv(buf)
    assert [(f.id, f.src_gs, f.dst_gs, f.rate_bps) for f in back] == [(f.id, f.src_gs, f.dst_gs, f.rate_bps) for f in flows]
    for a, b in zip(back, flows):
        assert a.start_s == pytest.approx(b.start_s, abs=1e-6)
        assert a.duration_s == pytest.approx(b.duration_s, abs=1e-6)


def test_flow_file_header_required():
    with pytest.raises(ConfigError):
        read_flows_csv(io.StringIO("id,src,dst\n"))


def test_cbr_schedule():
    times = cbr_schedule(FlowSpec(0, GS0, GS1, 1.2e6, 2.0, 1.0))
    assert len(times) == 100
    assert times[0] == 2.0
    assert times[1] - times[0] == pytest.approx(0.01)
    # a flow shorter than one interval still sends once
    assert len(cbr_schedule(FlowSpec(1, GS0, GS1, 1e3, 0.0, 0.1))) == 1
    with pytest.raises(UsageError):
        cbr_schedule(FlowSpec(2, GS0, GS1, 0.0, 0.0, 1.0))


def test_load_profiles():
    flows = [FlowSpec(0, GS0, GS1, 1e6, 0.5, 2.0), FlowSpec(1, GS1, GS0, 2e6, 1.0, 1.0)]
    assert active_flow_series(flows, 4.0).tolist() == [0, 2, 1, 0]
    assert offered_load_series(flows, 4.0).tolist() == [0.0, 3e6, 1e6, 0.0]


# ============================================================================
# CUBIC model
# ============================================================================


def test_slow_start_adds_acked_packets():
    cc = tcp_model_step(CcState(), Ack(3), 0.1)
    assert cc.cwnd_pkts == 13
    assert cc.in_slow_start


def test_loss_reduces_by_beta_and_window_is_continuous():
    cc = CcState(cwnd_pkts=100.0, in_slow_start=False)
    after = tcp_model_step(cc, Loss(), 5.0)
    assert after.cwnd_pkts == pytest.approx(CUBIC_BETA * 100.0)
    assert after.w_max_pkts == 100.0
    assert not after.in_slow_start
    assert cubic_window(after, 5.0) == pytest.approx(CUBIC_BETA * 100.0)
    assert cubic_window(after, 5.0 + after.k_s) == pytest.approx(100.0)


def test_avoidance_window_grows_monotonically():
    cc = tcp_model_step(CcState(cwnd_pkts=100.0, in_slow_start=False), Loss(), 0.0)
    windows = []
    for i in range(1, 100):
        cc = tcp_model_step(cc, Ack(1), i * 0.1)
        windows.append(cc.cwnd_pkts)
    assert windows == sorted(windows)
    assert windows[-1] > 100.0


def test_small_window_loss_floors_at_two():
    cc = tcp_model_step(CcState(cwnd_pkts=2.0, in_slow_start=False), Loss(), 1.0)
    assert cc.cwnd_pkts == 2.0


def test_timeout_restarts_slow_start():
    cc = tcp_model_step(CcState(cwnd_pkts=50.0, in_slow_start=False), Timeout(), 2.0)
    assert cc.cwnd_pkts == 1.0
    assert cc.in_slow_start
    assert cc.ssthresh_pkts == pytest.approx(35.0)
    cc = tcp_model_step(cc, Ack(40), 2.5)
    assert cc.cwnd_pkts == pytest.approx(35.0)
    assert not cc.in_slow_start


def test_rtt_estimate_is_smoothed():
    cc = tcp_model_step(CcState(), RttSample(0.1), 0.0)
    assert cc.rtt_estimate_s == 0.1
    cc = tcp_model_step(cc, RttSample(0.2), 0.0)
    assert cc.rtt_estimate_s == pytest.approx(0.1125)


def test_unknown_event_rejected():
    with pytest.raises(UsageError):
        tcp_model_step(CcState(), "ack", 0.0)


# ============================================================================
# Applications over a single link
# ============================================================================


def test_ping_rtt_on_single_link():
    sim = Simulator(single_link_network(10e6, 0.020, 100))
    ping = PingApp(GS0, GS1, interval_s=0.5, payload_bytes=64)
    ping.install(sim)
    sim.run(5.0)
    expected = 2 * (64 * 8 / 10e6 + 0.020)
    rtts = ping.rtts()
    assert len(rtts) == 10
    np.testing.assert_allclose(rtts, expected, rtol=1e-9)

    buf = io.StringIO()
    ping.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "seq,send_ms,rtt_ms"
    assert lines[2].startswith("1,500.000,40.102")


def test_ping_times_out_without_return_path():
    net = StaticNetwork([GS0, GS1], {(GS0, GS1): LinkSpec(10e6, 0.01, 10)})
    sim = Simulator(net)
    ping = PingApp(GS0, GS1, interval_s=0.5, stop_s=2.0)
    ping.install(sim)
    sim.run(3.0)
    assert len(ping.records) == 4
    assert all(r.timed_out for r in ping.records)
    assert np.isnan(ping.rtts()).all()


def test_ping_rejects_unknown_endpoint():
    sim = Simulator(single_link_network(10e6, 0.020, 100))
    with pytest.raises(ValueError):
        PingApp(GS0, NodeId.gs(7)).install(sim)


def test_speedtest_fills_the_link():
    rate = 10e6
    sim = Simulator(single_link_network(rate, 0.020, 100))
    app = SpeedtestApp(GS0, GS1)
    app.install(sim)
    sim.run(10.0)
    payload_rate = rate * 1440 / 1500
    per_second = goodput_series(app.log.deliveries, 1.0, 10.0).values
    # one extra segment may land in a window
    assert per_second.max() <= payload_rate + 1440 * 8
    steady = float(np.mean(per_second[4:]))
    assert steady >= 0.8 * payload_rate
    assert app.log.transmitted_bytes >= app.log.delivered_bytes
    # the queue overflowed at least once and recovery kicked in
    assert app.log.retransmissions > 0
    assert min(w for _, w in app.log.cwnd[1:]) < max(w for _, w in app.log.cwnd)


def test_speedtest_without_loss_never_retransmits():
    sim = Simulator(single_link_network(10e6, 0.020, 100_000))
    app = SpeedtestApp(GS0, GS1, start_s=0.5, duration_s=1.0)
    app.install(sim)
    sim.run(4.0)
    assert app.log.retransmissions == 0
    assert app.log.cwnd[0][0] == 0.5
    assert app.log.delivered_bytes == app.log.transmitted_bytes
    assert math.isclose(app.stop_s, 1.5)


class LossyPipe:
    """10 ms each way, no serialization; drops listed data segments once per listing."""

    def __init__(self, drop: list[int], delay_s: float = 0.010):
        self.loop = EventLoop()
        self.delay_s = delay_s
        self.drop = list(drop)
        self.sent: list[int] = []
        self._ids = itertools.count()

    def has_endpoint(self, node: NodeId) -> bool:
        return node in (GS0, GS1)

    def send(self, cls, src, dst, size_bytes, payload=None, on_deliver=None):
        now = self.loop.now
        pkt = Packet(next(self._ids), cls, src, dst, size_bytes, now, payload, on_deliver)
        if src == GS0:
            seq = payload[0]
            self.sent.append(seq)
            if seq in self.drop:
                self.drop.remove(seq)
                return pkt
        self.loop.schedule(now + self.delay_s, on_deliver, pkt, now + self.delay_s)
        return pkt


def test_three_duplicate_acks_go_back_to_the_hole():
    pipe = LossyPipe(drop=[3])
    app = SpeedtestApp(GS0, GS1)
    app.install(pipe)
    pipe.loop.run(0.045)
    # initial window, slow-start growth on the first three ACKs, then 0.7 * 13 from the hole
    assert pipe.sent[:16] == list(range(16))
    assert pipe.sent[16:25] == list(range(3, 12))
    # the hole's ACK covers everything buffered at the receiver
    assert pipe.sent[25:34] == list(range(16, 25))
    assert app.log.retransmissions == 9
    assert app.cc.w_max_pkts == 13
    # goodput counts each segment once
    assert len(app.log.deliveries) == 16
    assert app.log.delivered_bytes == 16 * 1440


def test_lost_retransmission_goes_back_again_without_second_cut():
    pipe = LossyPipe(drop=[3, 3])
    app = SpeedtestApp(GS0, GS1)
    app.install(pipe)
    pipe.loop.run(0.045)
    assert pipe.sent[16:25] == list(range(3, 12))
    assert pipe.sent[25:34] == list(range(3, 12))
    assert sum(1 for _, w in app.log.cwnd if w < 10) == 1
    assert app.cc.cwnd_pkts == pytest.approx(CUBIC_BETA * 13)


def test_timeout_restarts_from_the_first_unacknowledged_segment():
    pipe = LossyPipe(drop=list(range(10)))
    app = SpeedtestApp(GS0, GS1)
    app.install(pipe)
    pipe.loop.run(0.999)
    assert pipe.sent == list(range(10))
    pipe.loop.run(1.025)
    # one segment on the timeout, two once it is acknowledged
    assert pipe.sent[10:] == [0, 1, 2]
    assert app.log.retransmissions == 3
    assert app.log.cwnd[-2] == (1.0, 1.0)
