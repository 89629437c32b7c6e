"""Pairwise distances and threshold peer networks.

Two metrics: straight-line distance between parcels, and on-road travel
distance (parcel -> nearest road point -> shortest path along roads ->
parcel). Two homes are peers when their distance is strictly below the
threshold tau_d.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from ._common import write_csv


def euclidean_distance(a, b) -> float:
    """Planar distance in meters between two (x, y) points."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


class RoadGraphError(ValueError):
    pass


@dataclass(frozen=True)
class AccessPoint:
    """Nearest point on the road network for one parcel."""

    edge: int          # index into RoadGraph.edges
    offset: float      # meters from edge endpoint a
    connector: float   # straight-line meters from parcel to the road
    point: tuple[float, float]


class RoadGraph:
    """Undirected spatially embedded road network.

    Edge lengths must be positive and no shorter than the straight-line
    distance between their endpoints, so travel distance can never beat
    the crow's flight.
    """

    def __init__(self, nodes: dict[str, tuple[float, float]],
                 edges: Iterable[tuple[str, str, float | None]]):
        self.nodes = dict(nodes)
        self.edges: list[tuple[str, str, float]] = []
        for a, b, length in edges:
            if a not in self.nodes or b not in self.nodes:
                raise RoadGraphError(f"edge references unknown node: {(a, b)}")
            chord = euclidean_distance(self.nodes[a], self.nodes[b])
            if length is None:
                length = chord
            if length <= 0:
                raise RoadGraphError(f"non-positive edge length on {(a, b)}")
            if length < chord * (1 - 1e-9):
                raise RoadGraphError(f"edge {(a, b)} shorter than its chord")
            self.edges.append((a, b, float(length)))
        if not self.edges:
            raise RoadGraphError("road graph has no edges")

    def snap(self, point) -> AccessPoint:
        """Project a parcel onto its nearest road edge (clamped to segment)."""
        best = None
        px, py = float(point[0]), float(point[1])
        for idx, (a, b, length) in enumerate(self.edges):
            ax, ay = self.nodes[a]
            bx, by = self.nodes[b]
            dx, dy = bx - ax, by - ay
            seg2 = dx * dx + dy * dy
            t = 0.0 if seg2 == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / seg2))
            qx, qy = ax + t * dx, ay + t * dy
            conn = math.hypot(px - qx, py - qy)
            if best is None or conn < best.connector:
                # offset measured along the declared edge length (supports
                # curvy edges whose length exceeds the chord)
                best = AccessPoint(edge=idx, offset=t * length, connector=conn, point=(qx, qy))
        return best


def snap_to_road(graph: RoadGraph, point) -> AccessPoint:
    return graph.snap(point)


def _build_adjacency(graph: RoadGraph, access: Sequence[AccessPoint]) -> tuple[dict, list]:
    """Adjacency over road nodes plus access points.

    Each edge carrying access points is subdivided at their offsets so
    same-edge distances are exact.
    """
    adj: dict = {name: [] for name in graph.nodes}
    on_edge: dict[int, list[tuple[float, int]]] = {}
    for k, ap in enumerate(access):
        on_edge.setdefault(ap.edge, []).append((ap.offset, k))

    def connect(u, v, w):
        adj.setdefault(u, []).append((v, w))
        adj.setdefault(v, []).append((u, w))

    for idx, (a, b, length) in enumerate(graph.edges):
        stops = sorted(on_edge.get(idx, []))
        prev_node, prev_off = a, 0.0
        for off, k in stops:
            connect(prev_node, ("ap", k), off - prev_off)
            prev_node, prev_off = ("ap", k), off
        connect(prev_node, b, length - prev_off)
    return adj, [("ap", k) for k in range(len(access))]


def _dijkstra(adj: dict, source, cutoff: float = math.inf) -> dict:
    """Distances from source to every node within cutoff."""
    dist = {source: 0.0}
    heap = [(0.0, 0, source)]
    tie = 1
    while heap:
        d, _, u = heapq.heappop(heap)
        if d > dist.get(u, math.inf):
            continue
        for v, w in adj.get(u, ()):
            nd = d + w
            if nd <= cutoff and nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, tie, v))
                tie += 1
    return dist


def road_travel_distance(graph: RoadGraph, a, b) -> float:
    """connector(a) + shortest road path + connector(b), in meters.

    Returns inf when the two access points sit in disconnected road
    components (such parcels are never neighbors).
    """
    if float(a[0]) == float(b[0]) and float(a[1]) == float(b[1]):
        return 0.0
    ap_a, ap_b = graph.snap(a), graph.snap(b)
    adj, names = _build_adjacency(graph, [ap_a, ap_b])
    dist = _dijkstra(adj, names[0])
    through = dist.get(names[1], math.inf)
    return ap_a.connector + through + ap_b.connector


def road_distances_within(graph: RoadGraph, points: Sequence[tuple[float, float]],
                          cutoff: float) -> dict[tuple[int, int], float]:
    """All point pairs with travel distance < cutoff, as {(i, j): meters}.

    Runs one cutoff-limited Dijkstra per point over the access-point-
    subdivided graph; no full distance matrix is ever held.
    """
    access = [graph.snap(p) for p in points]
    adj, names = _build_adjacency(graph, access)
    out: dict[tuple[int, int], float] = {}
    for i in range(len(points)):
        budget = cutoff - access[i].connector
        if budget <= 0:
            continue
        dist = _dijkstra(adj, names[i], cutoff=budget)
        for j in range(i + 1, len(points)):
            through = dist.get(names[j])
            if through is None:
                continue
            d = access[i].connector + through + access[j].connector
            if d < cutoff:
                out[(i, j)] = d
    return out


@dataclass
class PeerNetwork:
    """Symmetric unweighted neighbor lists induced by a metric + threshold."""

    ids: list[str]
    metric: str                  # "euclidean" | "on_road"
    tau_d: float                 # meters
    neighbors: list[np.ndarray]  # per node, sorted int indices
    distances: dict | None = None  # (i, j) -> meters, i < j

    def __post_init__(self):
        self.index = {hid: k for k, hid in enumerate(self.ids)}

    @property
    def n(self) -> int:
        return len(self.ids)

    def degree(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    def edges(self) -> Iterable[tuple[int, int]]:
        for i, nbrs in enumerate(self.neighbors):
            for j in nbrs:
                if i < j:
                    yield (i, int(j))

    def edge_set(self) -> set[tuple[int, int]]:
        return set(self.edges())

    def adjacency_csr(self):
        if getattr(self, "_adjacency", None) is None:
            import scipy.sparse as sp

            rows, cols = [], []
            for i, nbrs in enumerate(self.neighbors):
                rows.extend([i] * len(nbrs))
                cols.extend(int(j) for j in nbrs)
            data = np.ones(len(rows), dtype=np.float64)
            self._adjacency = sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
        return self._adjacency

    def write_edges_csv(self, path):
        rows = []
        for i, j in sorted(self.edge_set()):
            d = self.distances.get((i, j)) if self.distances else None
            rows.append([self.ids[i], self.ids[j], d, self.metric])
        write_csv(path, ["id_a", "id_b", "distance_m", "metric"], rows)


def build_network(households, ids: Sequence[str], metric: str, tau_d: float,
                  road_graph: RoadGraph | None = None) -> PeerNetwork:
    """Threshold network over the given household ids (core plus buffer).

    An edge exists iff the metric distance is strictly less than ``tau_d``
    (meters). Disconnected road pairs are simply non-neighbors.
    """
    if tau_d <= 0:
        raise ValueError("tau_d must be positive")
    by_id = {h.id: h for h in households}
    ids = list(ids)
    pts = [(by_id[i].x, by_id[i].y) for i in ids]
    neighbors: list[list[int]] = [[] for _ in ids]
    distances: dict[tuple[int, int], float] = {}

    if metric == "euclidean":
        if pts:
            tree = cKDTree(np.asarray(pts))
            for i, j in tree.query_pairs(r=tau_d):
                i, j = (i, j) if i < j else (j, i)
                d = euclidean_distance(pts[i], pts[j])
                if d < tau_d:
                    neighbors[i].append(j)
                    neighbors[j].append(i)
                    distances[(i, j)] = d
    elif metric == "on_road":
        if road_graph is None:
            raise ValueError("on_road metric requires a road graph")
        for (i, j), d in road_distances_within(road_graph, pts, cutoff=tau_d).items():
            neighbors[i].append(j)
            neighbors[j].append(i)
            distances[(i, j)] = d
    else:
        raise ValueError(f"unknown metric {metric!r}")

    return PeerNetwork(ids=ids, metric=metric, tau_d=float(tau_d),
                       neighbors=[np.array(sorted(nb), dtype=np.int64) for nb in neighbors],
                       distances=distances)


def distance_regression(points: Sequence[tuple[float, float]], road_graph: RoadGraph,
                        max_points: int = 500, seed: int = 0) -> dict[str, tuple[float, float]]:
    """OLS fit of on-road vs straight-line pairwise distance, both ways.

    Returns {"road_on_euclid": (slope, intercept), "euclid_on_road": ...}.
    Point sets larger than ``max_points`` are subsampled with a seeded RNG
    to keep the all-pairs scan desk-sized.
    """
    points = list(points)
    if len(points) > max_points:
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(points), size=max_points, replace=False)
        points = [points[k] for k in sorted(keep)]
    de, dr = [], []
    road = road_distances_within(road_graph, points, cutoff=math.inf)
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            d = road.get((i, j))
            if d is None or not math.isfinite(d):
                continue
            de.append(euclidean_distance(points[i], points[j]))
            dr.append(d)
    if len(de) < 2:
        raise ValueError("need at least 2 finite pairs for a regression")
    de_arr, dr_arr = np.asarray(de), np.asarray(dr)
    if np.ptp(de_arr) == 0 or np.ptp(dr_arr) == 0:
        raise ValueError("degenerate distances: all pairs equal")

    def ols(x, y):
        slope, intercept = np.polyfit(x, y, 1)
        return float(slope), float(intercept)

    return {"road_on_euclid": ols(de_arr, dr_arr), "euclid_on_road": ols(dr_arr, de_arr)}


def load_road_graph(nodes_path, edges_path) -> RoadGraph:
    """Read ``node_id,x,y`` and ``edge_id,node_a,node_b[,length]`` files."""
    nodes: dict[str, tuple[float, float]] = {}
    with open(nodes_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            nodes[row["node_id"].strip()] = (float(row["x"]), float(row["y"]))
    edges = []
    with open(edges_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            raw = (row.get("length") or "").strip()
            edges.append((row["node_a"].strip(), row["node_b"].strip(),
                          float(raw) if raw else None))
    return RoadGraph(nodes, edges)
