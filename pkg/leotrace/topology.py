"""Time-varying constellation graph, forwarding states and route identifiers.

Satellites form a +grid of ISLs; ground stations attach to every satellite
above the minimum elevation. Forwarding states are all-pairs shortest paths
(Floyd-Warshall, Euclidean distance weights) sampled at fixed epochs.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterator, NamedTuple, Sequence, TextIO

import numpy as np

from leotrace.errors import ConfigError, ForwardingError, UsageError
from leotrace.geom import (
    ConstellationSpec,
    GroundStation,
    elevation_matrix_deg,
    ground_station_positions,
    satellite_positions,
)

logger = logging.getLogger(__name__)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


class NodeKind(IntEnum):
    SATELLITE = 0
    GROUND_STATION = 1


class NodeId(NamedTuple):
    """Satellite (orbit-major index) or ground station; orders satellites first."""

    kind: NodeKind
    index: int

    @classmethod
    def sat(cls, index: int) -> "NodeId":
        return cls(NodeKind.SATELLITE, index)

    @classmethod
    def gs(cls, index: int) -> "NodeId":
        return cls(NodeKind.GROUND_STATION, index)

    @property
    def is_satellite(self) -> bool:
        return self.kind == NodeKind.SATELLITE

    def __str__(self) -> str:
        return f"sat-{self.index}" if self.is_satellite else f"gs-{self.index}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        kind, _, index = text.partition("-")
        if kind == "sat":
            return cls.sat(int(index))
        if kind == "gs":
            return cls.gs(int(index))
        raise ValueError(f"bad node name: {text!r}")


class LinkKind(str, Enum):
    ISL = "isl"
    GSL = "gsl"


class LinkId(NamedTuple):
    src: NodeId
    dst: NodeId
    kind: LinkKind


class Handover(str, Enum):
    NONE = "none"
    GSL_SRC = "gsl_src"
    GSL_DST = "gsl_dst"
    BOTH = "both"


@dataclass(frozen=True)
class PathRecord:
    nodes: tuple[NodeId, ...]
    links: tuple[LinkId, ...]
    route_id: int

    @property
    def first_satellite(self) -> NodeId | None:
        return self.nodes[1] if len(self.nodes) > 2 else None

    @property
    def last_satellite(self) -> NodeId | None:
        return self.nodes[-2] if len(self.nodes) > 2 else None


# ============================================================================
# Node indexing
# ============================================================================


def node_index(node: NodeId, num_sats: int) -> int:
    """Dense graph index: satellites first, then ground stations."""
    return node.index if node.is_satellite else num_sats + node.index


def node_at(index: int, num_sats: int) -> NodeId:
    return NodeId.sat(index) if index < num_sats else NodeId.gs(index - num_sats)


def link_between(a: NodeId, b: NodeId) -> LinkId:
    kind = LinkKind.ISL if a.is_satellite and b.is_satellite else LinkKind.GSL
    return LinkId(a, b, kind)


# ============================================================================
# Links
# ============================================================================


def build_isl_grid(spec: ConstellationSpec) -> list[LinkId]:
    """+grid ISLs: next slot in the same orbit and same slot in the next orbit.

    Each undirected edge is listed once (O*S*2 edges, degree 4 per satellite).
    """
    o, s = spec.num_orbits, spec.sats_per_orbit
    if o < 3 or s < 3:
        raise ConfigError(f"+grid needs at least 3 orbits and 3 satellites per orbit (got {o}x{s})")
    links = []
    for orbit in range(o):
        for slot in range(s):
            here = NodeId.sat(orbit * s + slot)
            links.append(LinkId(here, NodeId.sat(orbit * s + (slot + 1) % s), LinkKind.ISL))
            links.append(LinkId(here, NodeId.sat(((orbit + 1) % o) * s + slot), LinkKind.ISL))
    return links


def isl_adjacency(links: Sequence[LinkId]) -> dict[NodeId, set[NodeId]]:
    """Undirected neighbor sets for a list of ISLs."""
    adjacency: dict[NodeId, set[NodeId]] = {}
    for link in links:
        adjacency.setdefault(link.src, set()).add(link.dst)
        adjacency.setdefault(link.dst, set()).add(link.src)
    return adjacency


def visible_gsls(spec: ConstellationSpec, stations: Sequence[GroundStation], t: float) -> list[LinkId]:
    """One station->satellite GSL per pair above the minimum elevation at t."""
    if not stations:
        return []
    elev = elevation_matrix_deg(ground_station_positions(stations, t), satellite_positions(spec, t))
    links = []
    for g, sat in zip(*np.nonzero(elev >= spec.min_elevation_deg)):
        links.append(LinkId(NodeId.gs(int(g)), NodeId.sat(int(sat)), LinkKind.GSL))
    return links


# ============================================================================
# Floyd-Warshall
# ============================================================================


def floyd_warshall(weights: np.ndarray, transit: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs shortest paths with next-hop reconstruction.

    Args:
        weights: (n, n) edge weights, ``inf`` where no edge exists.
        transit: optional boolean mask of nodes allowed as intermediates.

    Returns:
        (dist, next_index): next_index[i, j] is the neighbor of i on the path
        to j, -1 when unreachable or i == j.

    Intermediates are tried in ascending index order and only strict
    improvements replace a path, so ties keep the route through the lower
    intermediate node.
    """
    n = weights.shape[0]
    dist = np.array(weights, dtype=float, copy=True)
    np.fill_diagonal(dist, 0.0)
    nxt = np.where(np.isfinite(dist), np.arange(n)[None, :], -1).astype(np.int32)
    np.fill_diagonal(nxt, -1)

    for k in range(n):
        if transit is not None and not transit[k]:
            continue
        via = dist[:, k, None] + dist[None, k, :]
        better = via < dist
        if not better.any():
            continue
        dist = np.where(better, via, dist)
        nxt = np.where(better, nxt[:, k, None], nxt)
    return dist, nxt


# ============================================================================
# Forwarding state
# ============================================================================


@dataclass(frozen=True)
class ForwardingState:
    """Next-hop tables of every node for one routing epoch."""

    epoch_s: float
    num_sats: int
    num_stations: int
    next_index: np.ndarray = field(repr=False)
    dist: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.num_sats + self.num_stations

    def index(self, node: NodeId) -> int:
        return node_index(node, self.num_sats)

    def node(self, index: int) -> NodeId:
        return node_at(index, self.num_sats)

    def next_hop(self, node: NodeId, destination: NodeId) -> LinkId | None:
        hop = int(self.next_index[self.index(node), self.index(destination)])
        if hop < 0:
            return None
        return link_between(node, self.node(hop))

    def distance(self, src: NodeId, dst: NodeId) -> float:
        return float(self.dist[self.index(src), self.index(dst)])

    @property
    def next_hop_map(self) -> dict[tuple[NodeId, NodeId], LinkId]:
        """(node, destination) -> outgoing link, for reachable pairs only."""
        table = {}
        for i, j in np.argwhere(self.next_index >= 0):
            a, b = self.node(int(i)), self.node(int(j))
            table[(a, b)] = link_between(a, self.node(int(self.next_index[i, j])))
        return table

    def same_tables(self, other: "ForwardingState") -> bool:
        return np.array_equal(self.next_index, other.next_index)


def graph_weights(spec: ConstellationSpec, stations: Sequence[GroundStation], t: float) -> np.ndarray:
    """Distance-weighted adjacency of satellites + stations at time t."""
    n_sat = spec.num_satellites
    n = n_sat + len(stations)
    sat_pos = satellite_positions(spec, t)
    weights = np.full((n, n), np.inf)

    isl = np.array([(l.src.index, l.dst.index) for l in build_isl_grid(spec)])
    d = np.linalg.norm(sat_pos[isl[:, 0]] - sat_pos[isl[:, 1]], axis=1)
    weights[isl[:, 0], isl[:, 1]] = d
    weights[isl[:, 1], isl[:, 0]] = d

    if stations:
        gs_pos = ground_station_positions(stations, t)
        elev = elevation_matrix_deg(gs_pos, sat_pos)
        g_idx, s_idx = np.nonzero(elev >= spec.min_elevation_deg)
        d = np.linalg.norm(gs_pos[g_idx] - sat_pos[s_idx], axis=1)
        weights[n_sat + g_idx, s_idx] = d
        weights[s_idx, n_sat + g_idx] = d
    return weights


def compute_forwarding_state(spec: ConstellationSpec, stations: Sequence[GroundStation], t: float) -> ForwardingState:
    """Shortest-path forwarding state at time t; stations never relay traffic."""
    weights = graph_weights(spec, stations, t)
    transit = np.zeros(weights.shape[0], dtype=bool)
    transit[: spec.num_satellites] = True
    dist, nxt = floyd_warshall(weights, transit)
    return ForwardingState(t, spec.num_satellites, len(stations), nxt, dist)


def epoch_count(interval_s: float, duration_s: float) -> int:
    if interval_s <= 0:
        raise UsageError(f"forwarding interval must be positive (got {interval_s})")
    return max(1, math.ceil(duration_s / interval_s - 1e-9))


def iter_forwarding_states(
    spec: ConstellationSpec,
    stations: Sequence[GroundStation],
    interval_s: float,
    duration_s: float,
) -> Iterator[ForwardingState]:
    """Lazily yield states at t = 0, interval, 2*interval, ... < duration."""
    n = epoch_count(interval_s, duration_s)
    for k in range(n):
        state = compute_forwarding_state(spec, stations, k * interval_s)
        if k % 100 == 0:
            logger.debug(f"Forwarding state {k}/{n} at t={state.epoch_s:.3f}s")
        yield state


def forwarding_timeline(
    spec: ConstellationSpec,
    stations: Sequence[GroundStation],
    interval_s: float,
    duration_s: float,
    workers: int = 1,
) -> list[ForwardingState]:
    """All forwarding states of a run; state k applies on [k*interval, (k+1)*interval)."""
    n = epoch_count(interval_s, duration_s)
    times = [k * interval_s for k in range(n)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            states = list(pool.map(lambda t: compute_forwarding_state(spec, stations, t), times))
    else:
        states = [compute_forwarding_state(spec, stations, t) for t in times]
    logger.info(f"Computed {n} forwarding states at {interval_s * 1000:.0f} ms interval")
    return states


# ============================================================================
# Paths and route identifiers
# ============================================================================


def route_id(nodes: Sequence[NodeId]) -> int:
    """FNV-1a 64-bit hash over little-endian (kind u8, index u32) pairs."""
    if not nodes:
        raise UsageError("route_id of an empty node sequence")
    h = FNV64_OFFSET
    for node in nodes:
        for byte in struct.pack("<BI", int(node.kind), node.index):
            h ^= byte
            h = (h * FNV64_PRIME) & _U64
    return h


def path_between(fs: ForwardingState, src: NodeId, dst: NodeId) -> PathRecord | None:
    """Follow next-hop tables from src to dst; None when unreachable."""
    nodes = [src]
    links: list[LinkId] = []
    here = src
    while here != dst:
        if len(links) >= fs.num_nodes:
            raise ForwardingError(f"forwarding loop from {src} to {dst} at t={fs.epoch_s}")
        link = fs.next_hop(here, dst)
        if link is None:
            return None
        links.append(link)
        here = link.dst
        nodes.append(here)
    return PathRecord(tuple(nodes), tuple(links), route_id(nodes))


def detect_handover(prev: PathRecord, next: PathRecord) -> Handover:
    """Which GSL ends of a station-to-station path changed between epochs."""
    if prev.nodes[0] != next.nodes[0] or prev.nodes[-1] != next.nodes[-1]:
        raise UsageError("paths do not share endpoints")
    src_changed = prev.first_satellite != next.first_satellite
    dst_changed = prev.last_satellite != next.last_satellite
    if src_changed and dst_changed:
        return Handover.BOTH
    if src_changed:
        return Handover.GSL_SRC
    if dst_changed:
        return Handover.GSL_DST
    return Handover.NONE


class RouteRegistry:
    """Records every route id seen in a run and flags hash collisions."""

    def __init__(self) -> None:
        self._routes: dict[int, tuple[NodeId, ...]] = {}
        self.collisions: list[tuple[int, tuple[NodeId, ...], tuple[NodeId, ...]]] = []

    def register(self, path: PathRecord) -> None:
        known = self._routes.setdefault(path.route_id, path.nodes)
        if known != path.nodes:
            logger.warning(f"Route id collision {path.route_id:016x}: {known} vs {path.nodes}")
            self.collisions.append((path.route_id, known, path.nodes))

    def __len__(self) -> int:
        return len(self._routes)


# ============================================================================
# Export
# ============================================================================


def write_timeline_csv(states: Iterator[ForwardingState] | Sequence[ForwardingState], sink: TextIO) -> int:
    """Write `epoch_ms,node,destination,next_hop_node` rows for changed entries.

    The first state is written in full; removed entries get an empty next hop.
    Returns the number of rows written.
    """
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["epoch_ms", "node", "destination", "next_hop_node"])
    prev: np.ndarray | None = None
    rows = 0
    for fs in states:
        cur = fs.next_index
        changed = (cur >= 0) if prev is None else (cur != prev)
        epoch_ms = round(fs.epoch_s * 1000)
        for i, j in np.argwhere(changed):
            hop = int(cur[i, j])
            writer.writerow([
                epoch_ms,
                fs.node(int(i)),
                fs.node(int(j)),
                fs.node(hop) if hop >= 0 else "",
            ])
            rows += 1
        prev = cur
    return rows


def read_timeline_csv(source: TextIO) -> list[tuple[int, NodeId, NodeId, NodeId | None]]:
    """Parse a timeline diff file into (epoch_ms, node, destination, next_hop) rows."""
    reader = csv.reader(source)
    header = next(reader, None)
    if header != ["epoch_ms", "node", "destination", "next_hop_node"]:
        raise ConfigError("forwarding timeline: missing or wrong header")
    rows = []
    for row in reader:
        hop = NodeId.parse(row[3]) if row[3] else None
        rows.append((int(row[0]), NodeId.parse(row[1]), NodeId.parse(row[2]), hop))
    return rows


def timeline_to_text(states: Sequence[ForwardingState]) -> str:
    buf = io.StringIO()
    write_timeline_csv(states, buf)
    return buf.getvalue()
