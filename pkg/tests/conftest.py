import numpy as np
import pytest

from airground.scenario import (
    AERIAL,
    GROUND,
    FuelModel,
    RoadNetwork,
    Scenario,
    TaskPoint,
    TeamConfig,
    generate_scenario,
)


@pytest.fixture
def fuel():
    return FuelModel()


@pytest.fixture
def team11():
    return TeamConfig(num_uavs=1, num_ugvs=1)


@pytest.fixture
def team21():
    return TeamConfig(num_uavs=2, num_ugvs=1)


def make_line_scenario(aerial_xy, ground_road_nodes=(1,), side=4000.0, team=None, seed=0):
    """Tiny hand-built instance on a 3-node line road: (0,0)-(2000,0)-(4000,0).

    ``ground_road_nodes`` lists road nodes that carry ground tasks; the depot
    is road node 0.  Aerial tasks come first in id order, then ground tasks.
    """
    road = RoadNetwork(
        nodes=[(0.0, 0.0), (side / 2, 0.0), (side, 0.0)],
        edges=[(0, 1), (1, 2)],
    )
    team = team or TeamConfig(1, 1)
    pts = []
    for i, (x, y) in enumerate(aerial_xy):
        pts.append(TaskPoint(i, float(x), float(y), AERIAL))
    for k, node in enumerate(ground_road_nodes):
        x, y = road.nodes[node]
        pts.append(TaskPoint(len(aerial_xy) + k, float(x), float(y), GROUND))
    return Scenario(side, 0, pts, road, FuelModel(), team, seed)


@pytest.fixture
def u15g5():
    return generate_scenario(15, 5, "uniform", TeamConfig(1, 1), seed=1)
