"""Distances, road snapping, threshold networks, and the distance regression."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerspread.geonet import (
    RoadGraph,
    RoadGraphError,
    build_network,
    distance_regression,
    euclidean_distance,
    load_road_graph,
    road_travel_distance,
    snap_to_road,
)
from conftest import make_household

coord = st.floats(-1e5, 1e5, allow_nan=False, allow_infinity=False)


def test_pythagorean_triple():
    assert euclidean_distance((0.0, 0.0), (3.0, 4.0)) == 5.0


def test_identity_distance():
    assert euclidean_distance((2.5, -7.0), (2.5, -7.0)) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.tuples(coord, coord), st.tuples(coord, coord), st.tuples(coord, coord))
def test_triangle_inequality(a, b, c):
    assert euclidean_distance(a, c) <= (
        euclidean_distance(a, b) + euclidean_distance(b, c) + 1e-7)


# --- snapping ---------------------------------------------------------------

@pytest.fixture
def straight_road():
    return RoadGraph({"a": (0.0, 0.0), "b": (10.0, 0.0)}, [("a", "b", None)])


def test_snap_perpendicular_foot(straight_road):
    ap = snap_to_road(straight_road, (5.0, 1.0))
    assert ap.offset == pytest.approx(5.0)
    assert ap.connector == pytest.approx(1.0)


def test_snap_clamps_to_endpoint(straight_road):
    ap = snap_to_road(straight_road, (15.0, 1.0))
    assert ap.offset == pytest.approx(10.0)
    assert ap.connector == pytest.approx(math.sqrt(26.0))
    assert ap.point == pytest.approx((10.0, 0.0))


def test_snap_on_edge_zero_connector(straight_road):
    ap = snap_to_road(straight_road, (3.0, 0.0))
    assert ap.connector == 0.0


# --- road travel distance ---------------------------------------------------

def test_straight_road_with_connectors():
    g = RoadGraph({"a": (0.0, 0.0), "b": (200.0, 0.0)}, [("a", "b", None)])
    d = road_travel_distance(g, (45.0, 5.0), (145.0, -5.0))
    assert d == pytest.approx(110.0)  # 5 m connector + 100 m along + 5 m


def test_same_point_distance_zero(straight_road):
    assert road_travel_distance(straight_road, (4.0, 3.0), (4.0, 3.0)) == 0.0


def block_grid_with_missing_street():
    """2x2 blocks of 100 m; the street between the center and mid-right
    nodes is missing, making those two parcels back-yard neighbors."""
    nodes = {f"n{i}{j}": (100.0 * i, 100.0 * j) for i in range(3) for j in range(3)}
    edges = []
    for i in range(3):
        for j in range(3):
            if i < 2 and not (i == 1 and j == 1):
                edges.append((f"n{i}{j}", f"n{i+1}{j}", None))
            if j < 2:
                edges.append((f"n{i}{j}", f"n{i}{j+1}", None))
    return RoadGraph(nodes, edges)


def test_grid_detour_case():
    g = block_grid_with_missing_street()
    a, b = (100.0, 100.0), (200.0, 100.0)
    assert euclidean_distance(a, b) == pytest.approx(100.0)
    assert road_travel_distance(g, a, b) == pytest.approx(300.0)


def test_disconnected_components_are_infinitely_far():
    g = RoadGraph({"a": (0, 0), "b": (10, 0), "c": (1000, 0), "d": (1010, 0)},
                  [("a", "b", None), ("c", "d", None)])
    assert math.isinf(road_travel_distance(g, (5.0, 1.0), (1005.0, 1.0)))


def test_edge_shorter_than_chord_rejected():
    with pytest.raises(RoadGraphError, match="chord"):
        RoadGraph({"a": (0, 0), "b": (10, 0)}, [("a", "b", 5.0)])


def test_curvy_edge_longer_than_chord_allowed():
    g = RoadGraph({"a": (0, 0), "b": (10, 0)}, [("a", "b", 14.0)])
    assert road_travel_distance(g, (0.0, 0.0), (10.0, 0.0)) == pytest.approx(14.0)


# --- threshold networks -----------------------------------------------------

def collinear_homes():
    return [make_household("p0", x=0.0), make_household("p1", x=50.0),
            make_household("p2", x=250.0)]


def test_collinear_tau_100m_single_edge():
    net = build_network(collinear_homes(), ["p0", "p1", "p2"], "euclidean", 100.0)
    assert net.edge_set() == {(0, 1)}


def test_collinear_tau_300m_two_edges():
    # 0/100/300 m: chain pairs at 100 and 200 m qualify, the 300 m pair
    # sits exactly at the (strict) threshold and stays out
    homes = [make_household("p0", x=0.0), make_household("p1", x=100.0),
             make_household("p2", x=300.0)]
    net = build_network(homes, ["p0", "p1", "p2"], "euclidean", 300.0)
    assert net.edge_set() == {(0, 1), (1, 2)}


def test_empty_sample_empty_network():
    net = build_network([], [], "euclidean", 100.0)
    assert net.n == 0 and net.edge_set() == set()


def test_threshold_is_strict():
    homes = [make_household("a", x=0.0), make_household("b", x=100.0)]
    assert build_network(homes, ["a", "b"], "euclidean", 100.0).edge_set() == set()
    assert build_network(homes, ["a", "b"], "euclidean", 100.0 + 1e-9).edge_set() == {(0, 1)}


def test_threshold_monotonicity_random_points():
    rng = np.random.default_rng(11)
    for _ in range(5):
        pts = rng.uniform(0, 1000, size=(60, 2))
        homes = [make_household(f"r{k}", x=float(x), y=float(y))
                 for k, (x, y) in enumerate(pts)]
        ids = [h.id for h in homes]
        e100 = build_network(homes, ids, "euclidean", 100.0).edge_set()
        e200 = build_network(homes, ids, "euclidean", 200.0).edge_set()
        e300 = build_network(homes, ids, "euclidean", 300.0).edge_set()
        assert e100 <= e200 <= e300


def test_network_symmetry_and_no_self_loops():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 500, size=(40, 2))
    homes = [make_household(f"r{k}", x=float(x), y=float(y))
             for k, (x, y) in enumerate(pts)]
    net = build_network(homes, [h.id for h in homes], "euclidean", 150.0)
    for i, nbrs in enumerate(net.neighbors):
        assert i not in nbrs
        for j in nbrs:
            assert i in net.neighbors[j]


def test_on_road_requires_graph():
    with pytest.raises(ValueError, match="road graph"):
        build_network(collinear_homes(), ["p0"], "on_road", 100.0)


def test_on_road_network_uses_travel_distance():
    g = block_grid_with_missing_street()
    homes = [make_household("a", x=100.0, y=100.0),
             make_household("b", x=200.0, y=100.0)]
    ids = ["a", "b"]
    # 100 m apart by crow, 300 m by road: neighbors at 150 m euclid only
    assert build_network(homes, ids, "euclidean", 150.0, road_graph=g).edge_set() == {(0, 1)}
    assert build_network(homes, ids, "on_road", 150.0, road_graph=g).edge_set() == set()
    assert build_network(homes, ids, "on_road", 301.0, road_graph=g).edge_set() == {(0, 1)}


def test_road_distance_never_below_euclidean():
    rng = np.random.default_rng(9)
    g = block_grid_with_missing_street()
    for _ in range(40):
        a = tuple(rng.uniform(-50, 250, size=2))
        b = tuple(rng.uniform(-50, 250, size=2))
        d_road = road_travel_distance(g, a, b)
        assert d_road >= euclidean_distance(a, b) - 1e-9


# --- distance regression ----------------------------------------------------

def test_regression_on_perfect_line():
    g = RoadGraph({"a": (0.0, 0.0), "b": (1000.0, 0.0)}, [("a", "b", None)])
    pts = [(x, 0.0) for x in (0.0, 100.0, 250.0, 400.0, 800.0)]
    reg = distance_regression(pts, g)
    slope, intercept = reg["road_on_euclid"]
    assert slope == pytest.approx(1.0, abs=1e-9)
    assert intercept == pytest.approx(0.0, abs=1e-6)


def test_regression_scaled_line_exact():
    # every edge 1.4x longer than its chord: road distance = 1.4 * euclid
    g = RoadGraph({"a": (0.0, 0.0), "b": (1000.0, 0.0)}, [("a", "b", 1400.0)])
    pts = [(x, 0.0) for x in (0.0, 100.0, 300.0, 700.0, 1000.0)]
    # offsets along the declared length scale accordingly; connectors are 0
    reg = distance_regression(pts, g)
    slope, intercept = reg["road_on_euclid"]
    assert slope == pytest.approx(1.4, abs=1e-9)
    assert intercept == pytest.approx(0.0, abs=1e-6)
    back_slope, _ = reg["euclid_on_road"]
    assert back_slope == pytest.approx(1.0 / 1.4, abs=1e-9)


def test_regression_degenerate_errors():
    g = RoadGraph({"a": (0.0, 0.0), "b": (10.0, 0.0)}, [("a", "b", None)])
    with pytest.raises(ValueError):
        distance_regression([(0.0, 0.0)], g)


def manhattan_grid(n, spacing):
    nodes = {f"n{i}_{j}": (spacing * i, spacing * j)
             for i in range(n) for j in range(n)}
    edges = []
    for i in range(n):
        for j in range(n):
            if i + 1 < n:
                edges.append((f"n{i}_{j}", f"n{i+1}_{j}", None))
            if j + 1 < n:
                edges.append((f"n{i}_{j}", f"n{i}_{j+1}", None))
    return RoadGraph(nodes, edges)


def test_grid_city_slope_matches_l1_oracle():
    """Dense street grid: travel distance ~ L1 metric, so the fitted slope
    approaches the 4/pi mean ratio for uniformly random orientations."""
    rng = np.random.default_rng(21)
    g = manhattan_grid(30, 25.0)
    pts = [tuple(p) for p in rng.uniform(25.0, 700.0, size=(60, 2))]
    reg = distance_regression(pts, g)
    slope, _ = reg["road_on_euclid"]

    # oracle: OLS of exact L1 distances on euclidean distances
    de, dl1 = [], []
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            de.append(euclidean_distance(pts[i], pts[j]))
            dl1.append(abs(pts[i][0] - pts[j][0]) + abs(pts[i][1] - pts[j][1]))
    oracle_slope = np.polyfit(de, dl1, 1)[0]
    assert slope == pytest.approx(oracle_slope, abs=0.03)
    assert slope == pytest.approx(4.0 / math.pi, abs=0.08)


# --- file round trips -------------------------------------------------------

def test_road_loader_defaults_length(tmp_path):
    (tmp_path / "nodes.csv").write_text(
        "node_id,x,y\na,0,0\nb,30,40\n", encoding="utf-8")
    (tmp_path / "edges.csv").write_text(
        "edge_id,node_a,node_b,length\ne1,a,b,\n", encoding="utf-8")
    g = load_road_graph(tmp_path / "nodes.csv", tmp_path / "edges.csv")
    assert g.edges[0][2] == pytest.approx(50.0)


def test_edges_csv_export(tmp_path):
    net = build_network(collinear_homes(), ["p0", "p1", "p2"], "euclidean", 220.0)
    out = tmp_path / "edges.csv"
    net.write_edges_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "id_a,id_b,distance_m,metric"
    assert lines[1] == "p0,p1,50.0,euclidean"
    assert lines[2] == "p1,p2,200.0,euclidean"
    assert len(lines) == 3
