"""Wall-clock relay over loopback UDP.

A client sends datagrams to relay socket A, an echo server behind relay
socket B bounces them back, and the client measures the round trip.
"""

from __future__ import annotations

import asyncio
import socket
import statistics

import pytest

from leotrace.errors import SessionError
from leotrace.relay import Endpoint, RelaySession, parse_address
from leotrace.replay import ChannelConfig, ChannelDrop, open_pair
from leotrace.tracefile import Direction
from tests.helpers import constant_trace

LOCALHOST = "127.0.0.1"


def _udp() -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind((LOCALHOST, 0))
    sock.setblocking(False)
    return sock


async def _echo(sock: socket.socket) -> None:
    loop = asyncio.get_running_loop()
    while True:
        data, addr = await loop.sock_recvfrom(sock, 2048)
        await loop.sock_sendto(sock, data, addr)


async def _ping_through_relay(count: int, interval_s: float, delay_us: int, loss_ratio: float = 0.0):
    loop = asyncio.get_running_loop()
    records = int((count * interval_s + 2.0) * 100)
    fwd = constant_trace(delay_us=delay_us, rate_bps=100_000_000, loss_ratio=loss_ratio, records=records)
    ret = constant_trace(delay_us=delay_us, rate_bps=100_000_000, loss_ratio=loss_ratio, records=records,
                         direction=Direction.RETURN)
    pair = open_pair(ChannelConfig(fwd), ChannelConfig(ret))

    echo, client = _udp(), _udp()
    session = RelaySession(pair, Endpoint((LOCALHOST, 0)), Endpoint((LOCALHOST, 0), echo.getsockname()[:2]))
    stop = asyncio.Event()
    relay = asyncio.create_task(session.run(None, stop))
    await session.ready.wait()
    echo_task = asyncio.create_task(_echo(echo))

    rtts: list[float] = []
    try:
        for i in range(count):
            sent = loop.time()
            await loop.sock_sendto(client, i.to_bytes(4, "big") + bytes(60), session.bound[0])
            try:
                await asyncio.wait_for(loop.sock_recvfrom(client, 2048), 0.5)
                rtts.append(loop.time() - sent)
            except asyncio.TimeoutError:
                pass
            await asyncio.sleep(interval_s)
    finally:
        stop.set()
        stats = await relay
        echo_task.cancel()
        await asyncio.gather(echo_task, return_exceptions=True)
        echo.close()
        client.close()
    return rtts, stats


def test_relay_round_trip():
    rtts, stats = asyncio.run(_ping_through_relay(count=30, interval_s=0.01, delay_us=5_000))
    assert len(rtts) == 30
    # the channel never releases early; scheduling adds at most a few ms
    assert min(rtts) >= 0.010
    assert statistics.median(rtts) <= 0.015
    assert stats.forward.offered == stats.forward.delivered == 30
    assert stats.ret.delivered == 30
    assert not stats.forward.drops and not stats.ret.drops
    assert stats.forward.reorders == 0
    assert stats.rss_bytes > 0
    assert stats.to_dict()["forward"]["delivered"] == 30


@pytest.mark.slow
def test_relay_round_trip_precision():
    rtts, stats = asyncio.run(_ping_through_relay(count=200, interval_s=0.01, delay_us=5_000))
    assert len(rtts) == 200
    rtts.sort()
    assert rtts[int(0.95 * len(rtts))] <= 0.012
    assert stats.forward.max_lateness_s < 0.01


def test_relay_applies_trace_loss():
    rtts, stats = asyncio.run(_ping_through_relay(count=5, interval_s=0.0, delay_us=1_000, loss_ratio=1.0))
    assert rtts == []
    assert stats.forward.drops[ChannelDrop.LOSS] == 5
    assert stats.ret.offered == 0


def test_relay_reports_unusable_endpoint():
    trace = constant_trace(records=10)
    pair = open_pair(ChannelConfig(trace), ChannelConfig(trace))
    session = RelaySession(pair, Endpoint(("256.0.0.1", 0)), Endpoint((LOCALHOST, 0)))
    with pytest.raises(SessionError) as info:
        asyncio.run(session.run(0.1))
    assert info.value.stats is session.stats


def test_parse_address():
    assert parse_address("127.0.0.1:47000") == ("127.0.0.1", 47000)
    assert parse_address("") is None
    with pytest.raises(ValueError):
        parse_address("47000")
    with pytest.raises(ValueError):
        parse_address("host:port")
