"""Wall-clock relay: UDP datagrams between two systems through a channel pair.

Socket A faces system A and feeds the forward channel; socket B faces system
B and feeds the return channel. Releases are scheduled on the asyncio clock
with a configurable granularity; lateness is measured, never hidden.
"""

from __future__ import annotations

import asyncio
import heapq
import logging
import socket
from dataclasses import dataclass, field
from typing import Any

import psutil

from leotrace.config import get_config
from leotrace.errors import ConfigError, SessionError
from leotrace.replay import Channel, ChannelPair, DirectionStats

logger = logging.getLogger(__name__)

RECV_BUFFER_SIZE = 65536

Address = tuple[str, int]


def parse_address(text: str | None) -> Address | None:
    """'host:port' -> (host, port); empty means learn from the first datagram."""
    if not text:
        return None
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"address must be host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"bad port in {text!r}") from None


@dataclass
class Endpoint:
    listen: Address
    target: Address | None = None

    @classmethod
    def from_config(cls, side: str) -> "Endpoint":
        config = get_config()
        listen = parse_address(config.get(f"relay.listen_{side}"))
        if listen is None:
            raise ConfigError(f"relay.listen_{side} is not configured")
        return cls(listen, parse_address(config.get(f"relay.target_{side}")))


@dataclass
class RelayStats:
    forward: DirectionStats = field(default_factory=DirectionStats)
    ret: DirectionStats = field(default_factory=DirectionStats)
    duration_s: float = 0.0
    cpu_percent: float = 0.0
    rss_bytes: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "forward": self.forward.to_dict(),
            "return": self.ret.to_dict(),
            "duration_s": round(self.duration_s, 3),
            "cpu_percent": self.cpu_percent,
            "rss_bytes": self.rss_bytes,
        }


class _Direction:
    """Ingest on one socket, release on the other."""

    def __init__(self, name: str, channel: Channel, in_sock: socket.socket, out_sock: socket.socket,
                 target: Address | None, stats: DirectionStats):
        self.name = name
        self.channel = channel
        self.in_sock = in_sock
        self.out_sock = out_sock
        self.target = target
        self.stats = stats
        self.peer: Address | None = None
        self.heap: list[tuple[float, int, bytes]] = []
        self.wake = asyncio.Event()
        self._seq = 0
        self._max_sent_seq = -1


class RelaySession:
    def __init__(self, pair: ChannelPair, endpoint_a: Endpoint, endpoint_b: Endpoint, granularity_s: float = 0.001):
        self.pair = pair
        self.endpoint_a = endpoint_a
        self.endpoint_b = endpoint_b
        self.granularity_s = granularity_s
        self.stats = RelayStats()
        # actual (host, port) of sockets A and B once bound; set before `ready`
        self.bound: list[Address] = []
        self.ready = asyncio.Event()
        self._start = 0.0
        self._loop: asyncio.AbstractEventLoop | None = None

    def _now(self) -> float:
        return self._loop.time() - self._start

    def _open(self, address: Address) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(address)
        sock.setblocking(False)
        logger.info(f"Relay listening on {address[0]}:{address[1]}")
        return sock

    async def _ingest(self, d: _Direction, reverse: _Direction) -> None:
        loop = self._loop
        while True:
            data, addr = await loop.sock_recvfrom(d.in_sock, RECV_BUFFER_SIZE)
            # replies for this side go back to whoever last sent from it
            reverse.peer = addr
            d.stats.offered += 1
            verdict = d.channel.offer(len(data), self._now())
            if not verdict.delivered:
                d.stats.drops[verdict.dropped] += 1
                continue
            heapq.heappush(d.heap, (verdict.release_s, d._seq, data))
            d._seq += 1
            d.wake.set()

    async def _release(self, d: _Direction) -> None:
        loop = self._loop
        while True:
            if not d.heap:
                d.wake.clear()
                await d.wake.wait()
                continue
            release, seq, data = d.heap[0]
            wait = release - self._now()
            if wait > 0:
                await asyncio.sleep(min(wait, self.granularity_s))
                continue
            heapq.heappop(d.heap)
            target = d.target or d.peer
            if target is None:
                d.stats.drops["no_target"] += 1
                continue
            await loop.sock_sendto(d.out_sock, data, target)
            d.stats.delivered += 1
            d.stats.max_lateness_s = max(d.stats.max_lateness_s, -wait)
            if seq < d._max_sent_seq:
                d.stats.reorders += 1
            d._max_sent_seq = max(d._max_sent_seq, seq)
            if -wait > 0.002:
                logger.debug(f"{d.name}: late release by {-wait * 1000:.2f} ms")

    async def run(self, duration_s: float | None = None, stop: asyncio.Event | None = None) -> RelayStats:
        self._loop = asyncio.get_running_loop()
        proc = psutil.Process()
        proc.cpu_percent(None)
        sockets: list[socket.socket] = []
        tasks: list[asyncio.Task] = []
        try:
            try:
                sock_a = self._open(self.endpoint_a.listen)
                sockets.append(sock_a)
                sock_b = self._open(self.endpoint_b.listen)
                sockets.append(sock_b)
                self.bound = [sock.getsockname()[:2] for sock in sockets]
            except OSError as e:
                raise SessionError(f"cannot open relay endpoint: {e}", self.stats) from e

            self._start = self._loop.time()
            self.ready.set()
            fwd = _Direction("forward", self.pair.forward, sock_a, sock_b, self.endpoint_b.target, self.stats.forward)
            ret = _Direction("return", self.pair.ret, sock_b, sock_a, self.endpoint_a.target, self.stats.ret)
            tasks = [
                asyncio.create_task(self._ingest(fwd, ret)),
                asyncio.create_task(self._ingest(ret, fwd)),
                asyncio.create_task(self._release(fwd)),
                asyncio.create_task(self._release(ret)),
            ]
            waiters = list(tasks)
            if stop is not None:
                waiters.append(asyncio.create_task(stop.wait()))
            done, _ = await asyncio.wait(waiters, timeout=duration_s, return_when=asyncio.FIRST_COMPLETED)
            for task in done:
                if task in tasks and task.exception() is not None:
                    raise SessionError(f"relay endpoint failed: {task.exception()}", self.stats) from task.exception()
            for task in waiters:
                task.cancel()
        finally:
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            for sock in sockets:
                sock.close()
            if self._loop is not None:
                self.stats.duration_s = self._now() if self._start else 0.0
            self.stats.cpu_percent = proc.cpu_percent(None)
            self.stats.rss_bytes = proc.memory_info().rss
        logger.info(f"Relay session finished: {self.stats.to_dict()}")
        return self.stats


async def run_realtime_relay(
    pair: ChannelPair,
    endpoint_a: Endpoint,
    endpoint_b: Endpoint,
    duration_s: float | None = None,
    granularity_s: float | None = None,
    stop: asyncio.Event | None = None,
) -> RelayStats:
    """Relay datagrams between the two endpoints until duration_s or stop."""
    if granularity_s is None:
        granularity_s = get_config().relay_granularity_s
    session = RelaySession(pair, endpoint_a, endpoint_b, granularity_s)
    return await session.run(duration_s, stop)
