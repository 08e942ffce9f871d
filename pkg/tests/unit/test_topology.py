"""Constellation graph, Floyd-Warshall forwarding and route identifiers."""

from __future__ import annotations

import io

import numpy as np
import pytest
from scipy.sparse.csgraph import dijkstra

from leotrace.errors import ConfigError, ForwardingError, UsageError
from leotrace.geom import ConstellationSpec, GroundStation
from leotrace.topology import (
    ForwardingState,
    Handover,
    LinkKind,
    NodeId,
    PathRecord,
    RouteRegistry,
    build_isl_grid,
    compute_forwarding_state,
    detect_handover,
    epoch_count,
    floyd_warshall,
    forwarding_timeline,
    isl_adjacency,
    path_between,
    read_timeline_csv,
    route_id,
    timeline_to_text,
    visible_gsls,
    write_timeline_csv,
)


# ============================================================================
# ISL grid
# ============================================================================


def test_isl_grid_has_degree_four(small_spec):
    links = build_isl_grid(small_spec)
    assert len(links) == 2 * small_spec.num_satellites
    adjacency = isl_adjacency(links)
    assert all(len(neighbors) == 4 for neighbors in adjacency.values())
    assert all(link.kind is LinkKind.ISL for link in links)


def test_isl_grid_wraps_around(small_spec):
    adjacency = isl_adjacency(build_isl_grid(small_spec))
    # last slot of orbit 0 neighbors first slot; last orbit neighbors orbit 0
    assert NodeId.sat(0) in adjacency[NodeId.sat(7)]
    assert NodeId.sat(3) in adjacency[NodeId.sat(7 * 8 + 3)]


def test_kuiper_grid_size():
    links = build_isl_grid(ConstellationSpec.preset("kuiper"))
    assert len(links) == 2 * 34 * 34
    assert len({(link.src, link.dst) for link in links}) == 2312


def test_isl_grid_too_small():
    spec = ConstellationSpec(altitude_km=600, num_orbits=2, sats_per_orbit=8, inclination_deg=53)
    with pytest.raises(ConfigError):
        build_isl_grid(spec)


# ============================================================================
# Floyd-Warshall
# ============================================================================


def _random_graph(rng: np.random.Generator, n: int, density: float) -> np.ndarray:
    weights = np.where(rng.random((n, n)) < density, rng.integers(1, 20, size=(n, n)).astype(float), np.inf)
    np.fill_diagonal(weights, np.inf)
    return weights


def _follow(nxt: np.ndarray, i: int, j: int) -> list[int]:
    path = [i]
    while path[-1] != j:
        path.append(int(nxt[path[-1], j]))
        assert len(path) <= nxt.shape[0]
    return path


def test_floyd_warshall_matches_dijkstra_on_random_graphs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(2, 25))
        weights = _random_graph(rng, n, float(rng.uniform(0.05, 0.5)))
        dist, nxt = floyd_warshall(weights)
        expected = dijkstra(weights, directed=True)
        np.testing.assert_array_equal(dist, expected)

        for i, j in zip(*np.nonzero(np.isfinite(dist))):
            if i == j:
                assert nxt[i, j] == -1
                continue
            path = _follow(nxt, int(i), int(j))
            assert sum(weights[a, b] for a, b in zip(path, path[1:])) == dist[i, j]
        assert np.all(nxt[~np.isfinite(dist)] == -1)


def test_floyd_warshall_transit_mask():
    # 0 - 1 - 2 through node 1 only; forbid 1 as intermediate
    inf = np.inf
    weights = np.array([[inf, 1.0, inf], [1.0, inf, 1.0], [inf, 1.0, inf]])
    dist, nxt = floyd_warshall(weights)
    assert dist[0, 2] == 2.0 and nxt[0, 2] == 1
    transit = np.array([True, False, True])
    dist, nxt = floyd_warshall(weights, transit)
    assert dist[0, 2] == inf and nxt[0, 2] == -1


def test_floyd_warshall_tie_prefers_lower_intermediate():
    inf = np.inf
    # 0 -> 3 via 1 or via 2, both cost 2
    weights = np.full((4, 4), inf)
    for a, b in ((0, 1), (1, 3), (0, 2), (2, 3)):
        weights[a, b] = 1.0
    _, nxt = floyd_warshall(weights)
    assert nxt[0, 3] == 1


# ============================================================================
# Forwarding state
# ============================================================================


def _hand_state() -> ForwardingState:
    """Three satellites in a line, gs-0 under sat-0, gs-1 under sat-2."""
    inf = np.inf
    w = np.full((5, 5), inf)
    for a, b, d in ((0, 1, 1.0), (1, 2, 1.0), (3, 0, 0.5), (4, 2, 0.5)):
        w[a, b] = w[b, a] = d
    transit = np.array([True, True, True, False, False])
    dist, nxt = floyd_warshall(w, transit)
    return ForwardingState(0.0, 3, 2, nxt, dist)


def test_path_between_hand_graph():
    fs = _hand_state()
    path = path_between(fs, NodeId.gs(0), NodeId.gs(1))
    assert path.nodes == (NodeId.gs(0), NodeId.sat(0), NodeId.sat(1), NodeId.sat(2), NodeId.gs(1))
    assert [link.kind for link in path.links] == [LinkKind.GSL, LinkKind.ISL, LinkKind.ISL, LinkKind.GSL]
    assert path.first_satellite == NodeId.sat(0)
    assert path.last_satellite == NodeId.sat(2)
    assert path.route_id == route_id(path.nodes)
    assert fs.distance(NodeId.gs(0), NodeId.gs(1)) == 3.0


def test_next_hop_map_and_unreachable():
    fs = _hand_state()
    table = fs.next_hop_map
    assert table[(NodeId.sat(0), NodeId.gs(1))].dst == NodeId.sat(1)
    cut = ForwardingState(0.0, 3, 2, np.full((5, 5), -1, dtype=np.int32), fs.dist)
    assert path_between(cut, NodeId.gs(0), NodeId.gs(1)) is None


def test_forwarding_loop_detected():
    nxt = np.full((5, 5), -1, dtype=np.int32)
    nxt[3, 4] = 0
    nxt[0, 4] = 1
    nxt[1, 4] = 0
    fs = ForwardingState(0.0, 3, 2, nxt, np.zeros((5, 5)))
    with pytest.raises(ForwardingError):
        path_between(fs, NodeId.gs(0), NodeId.gs(1))


def test_stations_never_relay(small_spec, stations):
    fs = compute_forwarding_state(small_spec, stations, 10.0)
    n_sat = small_spec.num_satellites
    sat_block = fs.next_index[:n_sat, :n_sat]
    assert np.all(sat_block < n_sat)
    # a station's only next hops are satellites
    gs_rows = fs.next_index[n_sat:, :]
    assert np.all((gs_rows < n_sat))
    np.testing.assert_allclose(fs.dist, fs.dist.T)


def test_visible_gsls_respect_min_elevation(small_spec, stations):
    for link in visible_gsls(small_spec, stations, 0.0):
        assert link.kind is LinkKind.GSL
        assert not link.src.is_satellite and link.dst.is_satellite


@pytest.mark.parametrize("t", [0.0, 600.0, 2400.0])
def test_no_satellite_visible_from_the_pole(small_spec, t):
    pole = GroundStation(id=0, name="North Pole", latitude_deg=90.0, longitude_deg=0.0)
    assert visible_gsls(small_spec, [pole], t) == []


def test_epoch_count():
    assert epoch_count(0.1, 200.0) == 2000
    assert epoch_count(1.0, 1.0) == 1
    assert epoch_count(0.3, 1.0) == 4
    with pytest.raises(UsageError):
        epoch_count(0.0, 1.0)


def test_timeline_is_deterministic_and_parses(small_spec, stations):
    states = forwarding_timeline(small_spec, stations, 0.5, 2.0)
    assert len(states) == 4
    assert [fs.epoch_s for fs in states] == [0.0, 0.5, 1.0, 1.5]
    first = timeline_to_text(states)
    again = timeline_to_text(forwarding_timeline(small_spec, stations, 0.5, 2.0, workers=2))
    assert first == again

    buf = io.StringIO()
    rows = write_timeline_csv(states, buf)
    buf.seek(0)
    parsed = read_timeline_csv(buf)
    assert len(parsed) == rows
    epoch0 = [r for r in parsed if r[0] == 0]
    assert len(epoch0) == int(np.count_nonzero(states[0].next_index >= 0))


def test_timeline_header_required():
    with pytest.raises(ConfigError):
        read_timeline_csv(io.StringIO("a,b,c,d\n"))


# ============================================================================
# Route identifiers and handovers
# ============================================================================


def test_route_id_depends_on_order_and_kind():
    a = [NodeId.gs(0), NodeId.sat(1), NodeId.gs(2)]
    assert route_id(a) == route_id(list(a))
    assert route_id(a) != route_id(a[::-1])
    assert route_id([NodeId.sat(0)]) != route_id([NodeId.gs(0)])
    assert 0 <= route_id(a) < 2**64
    with pytest.raises(UsageError):
        route_id([])


def _path(*sats: int) -> PathRecord:
    nodes = (NodeId.gs(0), *(NodeId.sat(s) for s in sats), NodeId.gs(1))
    return PathRecord(nodes, (), route_id(nodes))


@pytest.mark.parametrize(
    "prev, nxt, expected",
    [
        ((1, 2, 3), (1, 4, 3), Handover.NONE),
        ((1, 2, 3), (5, 2, 3), Handover.GSL_SRC),
        ((1, 2, 3), (1, 2, 6), Handover.GSL_DST),
        ((1, 2, 3), (5, 2, 6), Handover.BOTH),
    ],
)
def test_detect_handover(prev, nxt, expected):
    assert detect_handover(_path(*prev), _path(*nxt)) is expected


def test_detect_handover_requires_same_endpoints():
    other = PathRecord((NodeId.gs(0), NodeId.sat(1), NodeId.gs(2)), (), 0)
    with pytest.raises(UsageError):
        detect_handover(_path(1, 2), other)


def test_route_registry_flags_collisions():
    registry = RouteRegistry()
    registry.register(_path(1, 2))
    registry.register(_path(1, 2))
    assert len(registry) == 1 and not registry.collisions
    fake = PathRecord(_path(3, 4).nodes, (), _path(1, 2).route_id)
    registry.register(fake)
    assert len(registry.collisions) == 1


def test_node_id_text_round_trip():
    for node in (NodeId.sat(12), NodeId.gs(3)):
        assert NodeId.parse(str(node)) == node
    with pytest.raises(ValueError):
        NodeId.parse("router-1")
