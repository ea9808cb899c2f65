"""Problem instances: task points, road network, team and fuel models.

A :class:`Scenario` bundles everything a planner needs: the area, the fixed
road network with the depot, the task points (aerial points reachable only by
air, ground points sitting on road nodes), and the air-vehicle fuel model.

Node indexing convention used across the whole package: task points keep
their dense ids ``0..n_tasks-1`` and the depot is addressed as the extra
node ``n_tasks``.  Helpers on :class:`Scenario` expose coordinates, ground
flags and distance matrices in that augmented index space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import (
    DisconnectedNetworkError,
    GenerationError,
    InvalidSpeedError,
)
from .rng import make_rng

AERIAL = "aerial"
GROUND = "ground"

#: Rotorcraft electric power draw (W) as a cubic in airspeed (m/s); the
#: constant term (229.6 W) is the zero-airspeed draw, so v=0 is rejected by
#: the endurance math rather than silently extrapolated.
DEFAULT_FUEL_COEFFS = (0.0461, -0.5834, -1.8761, 229.6)
DEFAULT_FUEL_CAPACITY_KJ = 287.7

DEFAULT_AREA_SIDE_M = 20_000.0
AERIAL_SAMPLING_RADIUS_M = 7_000.0
MAX_PLACEMENT_ATTEMPTS = 10_000


@dataclass(frozen=True)
class TaskPoint:
    id: int
    x: float
    y: float
    kind: str  # AERIAL or GROUND

    def __post_init__(self):
        if self.kind not in (AERIAL, GROUND):
            raise ValueError(f"unknown task kind {self.kind!r}")


@dataclass(frozen=True)
class FuelModel:
    """Cubic power profile P(v) = c3 v^3 + c2 v^2 + c1 v + c0 plus capacity."""

    c3: float = DEFAULT_FUEL_COEFFS[0]
    c2: float = DEFAULT_FUEL_COEFFS[1]
    c1: float = DEFAULT_FUEL_COEFFS[2]
    c0: float = DEFAULT_FUEL_COEFFS[3]
    capacity_kj: float = DEFAULT_FUEL_CAPACITY_KJ

    def __post_init__(self):
        if self.capacity_kj <= 0:
            raise ValueError("capacity_kj must be positive")

    def power_w(self, v: float) -> float:
        if v <= 0:
            raise InvalidSpeedError(f"speed must be > 0 m/s, got {v}")
        return ((self.c3 * v + self.c2) * v + self.c1) * v + self.c0

    def fuel_kj(self, v: float, distance_m: float) -> float:
        if distance_m < 0:
            raise ValueError("distance must be >= 0")
        return self.power_w(v) * (distance_m / v) / 1000.0

    def endurance_s(self, v: float) -> float:
        return self.capacity_kj * 1000.0 / self.power_w(v)

    def range_m(self, v: float) -> float:
        return self.endurance_s(v) * v


def power_and_fuel(v: float, distance_m: float, model: FuelModel) -> Tuple[float, float, float]:
    """Power draw (W), energy for ``distance_m`` (kJ), and endurance (s) at speed ``v``."""
    power = model.power_w(v)
    fuel = model.fuel_kj(v, distance_m)
    endurance = model.endurance_s(v)
    return power, fuel, endurance


@dataclass(frozen=True)
class TeamConfig:
    num_uavs: int
    num_ugvs: int
    v_a: float = 10.0
    v_g: float = 4.5
    recharge_time_s: float = 300.0

    def __post_init__(self):
        if self.num_uavs < 1 or self.num_ugvs < 1:
            raise ValueError("team needs at least one UAV and one UGV")
        if not (self.v_a > self.v_g > 0):
            raise ValueError("speeds must satisfy v_a > v_g > 0")
        if self.recharge_time_s < 0:
            raise ValueError("recharge_time_s must be >= 0")


class RoadNetwork:
    """Undirected road graph; ground vehicles travel along shortest paths."""

    def __init__(self, nodes: Sequence[Tuple[float, float]], edges: Sequence[Tuple[int, int]]):
        self.nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        self.edges = [(int(i), int(j)) for i, j in edges]
        n = len(self.nodes)
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"bad edge ({i},{j})")
        self._dist: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.nodes)

    def edge_length(self, i: int, j: int) -> float:
        return float(np.hypot(*(self.nodes[i] - self.nodes[j])))

    def shortest_path_matrix(self) -> np.ndarray:
        """All-pairs shortest path lengths in meters (inf when disconnected)."""
        if self._dist is None:
            n = len(self.nodes)
            rows, cols, vals = [], [], []
            for i, j in self.edges:
                w = self.edge_length(i, j)
                rows += [i, j]
                cols += [j, i]
                vals += [w, w]
            graph = csr_matrix((vals, (rows, cols)), shape=(n, n))
            self._dist = dijkstra(graph, directed=False)
        return self._dist

    def is_connected(self) -> bool:
        return bool(np.all(np.isfinite(self.shortest_path_matrix())))

    def node_at(self, xy: Tuple[float, float], tol: float = 1e-6) -> Optional[int]:
        d = np.hypot(self.nodes[:, 0] - xy[0], self.nodes[:, 1] - xy[1])
        i = int(np.argmin(d))
        return i if d[i] <= tol else None


def grid_ring_network(area_side_m: float = DEFAULT_AREA_SIDE_M, grid_n: int = 5) -> RoadNetwork:
    """Fixed connected road graph: a square lattice plus a diamond ring.

    The lattice spans the whole area; the ring connects the four mid-side
    nodes diagonally, giving the ground vehicles shortcut arteries through
    the interior.
    """
    if grid_n < 3:
        raise ValueError("grid_n must be >= 3")
    step = area_side_m / (grid_n - 1)
    nodes = [(c * step, r * step) for r in range(grid_n) for c in range(grid_n)]
    nid = lambda r, c: r * grid_n + c
    edges = []
    for r in range(grid_n):
        for c in range(grid_n):
            if c + 1 < grid_n:
                edges.append((nid(r, c), nid(r, c + 1)))
            if r + 1 < grid_n:
                edges.append((nid(r, c), nid(r + 1, c)))
    mid = grid_n // 2
    ring = [nid(0, mid), nid(mid, grid_n - 1), nid(grid_n - 1, mid), nid(mid, 0)]
    for a, b in zip(ring, ring[1:] + ring[:1]):
        edges.append((a, b))
    return RoadNetwork(nodes, edges)


def travel_time(
    a: Tuple[float, float],
    b: Tuple[float, float],
    speed: float,
    mode: str = "euclidean",
    road: Optional[RoadNetwork] = None,
) -> float:
    """Travel time in seconds between two points.

    ``euclidean`` is straight-line flight; ``road`` uses shortest paths on
    the given network and requires both points to coincide with road nodes.
    """
    if speed <= 0:
        raise InvalidSpeedError(f"speed must be > 0, got {speed}")
    if mode == "euclidean":
        return math.hypot(a[0] - b[0], a[1] - b[1]) / speed
    if mode == "road":
        if road is None:
            raise ValueError("road mode requires a RoadNetwork")
        ia, ib = road.node_at(a), road.node_at(b)
        if ia is None or ib is None:
            raise ValueError("road mode requires both points on road nodes")
        d = road.shortest_path_matrix()[ia, ib]
        if not math.isfinite(d):
            raise DisconnectedNetworkError(f"no road path between nodes {ia} and {ib}")
        return float(d) / speed
    raise ValueError(f"unknown mode {mode!r}")


class Scenario:
    """A full problem instance.

    ``depot_road_node`` indexes into ``road.nodes``; every ground task point
    also sits exactly on a road node.  The depot is addressable as augmented
    node ``n_tasks`` and acts as a permanently-visited ground point: it hosts
    no task demand but is always available for recharging.
    """

    def __init__(
        self,
        area_side_m: float,
        depot_road_node: int,
        task_points: List[TaskPoint],
        road: RoadNetwork,
        fuel: FuelModel,
        team: TeamConfig,
        seed: int,
    ):
        self.area_side_m = float(area_side_m)
        self.depot_road_node = int(depot_road_node)
        self.task_points = list(task_points)
        self.road = road
        self.fuel = fuel
        self.team = team
        self.seed = int(seed)
        self._validate()
        self._build_geometry()

    # -- construction -----------------------------------------------------

    def _validate(self):
        ids = [t.id for t in self.task_points]
        if ids != list(range(len(ids))):
            raise ValueError("task ids must be dense from 0")
        if not (0 <= self.depot_road_node < len(self.road)):
            raise ValueError("depot must be a road node")
        for t in self.task_points:
            if not (0 <= t.x <= self.area_side_m and 0 <= t.y <= self.area_side_m):
                raise ValueError(f"task {t.id} outside the area square")
            if t.kind == GROUND and self.road.node_at((t.x, t.y)) is None:
                raise ValueError(f"ground task {t.id} does not sit on a road node")

    def _build_geometry(self):
        n = self.n_tasks
        coords = np.zeros((n + 1, 2))
        for t in self.task_points:
            coords[t.id] = (t.x, t.y)
        coords[n] = self.road.nodes[self.depot_road_node]
        self.node_xy = coords
        is_ground = np.zeros(n + 1, dtype=bool)
        road_idx = np.full(n + 1, -1, dtype=int)
        for t in self.task_points:
            if t.kind == GROUND:
                is_ground[t.id] = True
                road_idx[t.id] = self.road.node_at((t.x, t.y))
        is_ground[n] = True
        road_idx[n] = self.depot_road_node
        self.node_is_ground = is_ground
        self.node_road_index = road_idx
        self.recharge_nodes = np.flatnonzero(is_ground)
        diff = coords[:, None, :] - coords[None, :, :]
        self.fly_dist_m = np.hypot(diff[..., 0], diff[..., 1])
        road_d = self.road.shortest_path_matrix()
        rd = np.full((n + 1, n + 1), np.inf)
        mapped = np.flatnonzero(road_idx >= 0)
        rd[np.ix_(mapped, mapped)] = road_d[np.ix_(road_idx[mapped], road_idx[mapped])]
        self.road_dist_m = rd
        # energy per meter is constant at fixed cruise speed
        kj_per_m = self.fuel.power_w(self.team.v_a) / self.team.v_a / 1000.0
        self.fly_fuel_kj_matrix = self.fly_dist_m * kj_per_m

    # -- views -------------------------------------------------------------

    @property
    def n_tasks(self) -> int:
        return len(self.task_points)

    @property
    def n_nodes(self) -> int:
        return self.n_tasks + 1

    @property
    def depot_node(self) -> int:
        return self.n_tasks

    def fly_time_s(self, i: int, j: int) -> float:
        return float(self.fly_dist_m[i, j]) / self.team.v_a

    def fly_fuel_kj(self, i: int, j: int) -> float:
        return float(self.fly_fuel_kj_matrix[i, j])

    def fly_fuel_kj_row(self, i: int) -> np.ndarray:
        return self.fly_fuel_kj_matrix[i]

    def road_time_s(self, i: int, j: int) -> float:
        d = float(self.road_dist_m[i, j])
        if not math.isfinite(d):
            raise DisconnectedNetworkError(f"no road path between nodes {i} and {j}")
        return d / self.team.v_g

    def coverage_radius_m(self) -> float:
        """Half the flight range at cruise speed: out-and-back reach of one tank."""
        return 0.5 * self.fuel.range_m(self.team.v_a)

    def with_extra_tasks(self, new_points: List[TaskPoint]) -> "Scenario":
        """Copy of this scenario with tasks appended (ids must continue densely)."""
        return Scenario(
            self.area_side_m,
            self.depot_road_node,
            self.task_points + list(new_points),
            self.road,
            self.fuel,
            self.team,
            self.seed,
        )

    def with_team(self, team: TeamConfig) -> "Scenario":
        return Scenario(
            self.area_side_m,
            self.depot_road_node,
            self.task_points,
            self.road,
            self.fuel,
            team,
            self.seed,
        )


def _sample_aerial_xy(rng, distribution, ground_xy, area_side):
    if distribution == "uniform":
        g = ground_xy[rng.integers(len(ground_xy))]
        r = AERIAL_SAMPLING_RADIUS_M * math.sqrt(rng.random())
        theta = 2 * math.pi * rng.random()
        return g[0] + r * math.cos(theta), g[1] + r * math.sin(theta)
    cx = cy = area_side / 2
    if distribution == "gaussian":
        return rng.normal(cx, 3000.0), rng.normal(cy, 3000.0)
    if distribution == "rayleigh":
        r = rng.rayleigh(5000.0)
        theta = 2 * math.pi * rng.random()
        return cx + r * math.cos(theta), cy + r * math.sin(theta)
    raise ValueError(f"unknown distribution {distribution!r}")


def generate_scenario(
    n_aerial: int,
    n_ground: int,
    distribution: str,
    team: TeamConfig,
    seed: int,
    area_side_m: float = DEFAULT_AREA_SIDE_M,
    fuel: Optional[FuelModel] = None,
    road: Optional[RoadNetwork] = None,
) -> Scenario:
    """Randomized instance with ``n_aerial`` air-only and ``n_ground`` road points.

    Ground points are drawn from road nodes (the depot is the node nearest
    the area center and is excluded from the draw).  Aerial points follow the
    requested spatial distribution, rejection-sampled until they fall inside
    the area and within the 7 km sampling radius of some ground point, which
    keeps every instance coverable by the refuel-stop planner.  Deterministic
    for a fixed seed.
    """
    if n_aerial < 1 or n_ground < 1:
        raise ValueError("need at least one aerial and one ground point")
    fuel = fuel or FuelModel()
    if road is None:
        road = grid_ring_network(area_side_m, grid_n=5 if n_ground <= 15 else 7)
    center = np.array([area_side_m / 2, area_side_m / 2])
    depot_road_node = int(np.argmin(np.hypot(*(road.nodes - center).T)))
    candidates = [i for i in range(len(road)) if i != depot_road_node]
    if len(candidates) < n_ground:
        raise GenerationError(
            f"road network has {len(candidates)} candidate nodes, need {n_ground}"
        )

    rng = make_rng(seed)
    chosen = rng.choice(len(candidates), size=n_ground, replace=False)
    ground_nodes = [candidates[int(k)] for k in chosen]
    ground_xy = road.nodes[ground_nodes]

    points: List[TaskPoint] = []
    next_id = 0
    for _ in range(n_aerial):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            x, y = _sample_aerial_xy(rng, distribution, ground_xy, area_side_m)
            if not (0 <= x <= area_side_m and 0 <= y <= area_side_m):
                continue
            near = np.hypot(ground_xy[:, 0] - x, ground_xy[:, 1] - y)
            if near.min() <= AERIAL_SAMPLING_RADIUS_M:
                points.append(TaskPoint(next_id, float(x), float(y), AERIAL))
                next_id += 1
                break
        else:
            raise GenerationError(
                f"could not place aerial point {next_id} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
    for node in ground_nodes:
        x, y = road.nodes[node]
        points.append(TaskPoint(next_id, float(x), float(y), GROUND))
        next_id += 1

    return Scenario(area_side_m, depot_road_node, points, road, fuel, team, seed)
