"""Cooperative mission planning for energy-constrained UAV-UGV teams."""

from .scenario import (
    AERIAL,
    GROUND,
    FuelModel,
    RoadNetwork,
    Scenario,
    TaskPoint,
    TeamConfig,
    generate_scenario,
    grid_ring_network,
    power_and_fuel,
    travel_time,
)

__all__ = [
    "AERIAL",
    "GROUND",
    "FuelModel",
    "RoadNetwork",
    "Scenario",
    "TaskPoint",
    "TeamConfig",
    "generate_scenario",
    "grid_ring_network",
    "power_and_fuel",
    "travel_time",
]

__version__ = "0.1.0"
