from .setcover import RefuelPlan, solve_msc
from .tsp import solve_tsp_stops
from .evrptw import (
    EvrptwModel,
    EvrptwSolution,
    Violation,
    build_evrptw_model,
    enumerate_optimal,
    evrptw_objective,
    validate_evrptw,
)
from .search import Budget, SolveStats, solve_evrptw
from .driver import HeuristicSolution, Subproblem, solve_bilevel, split_subproblems

__all__ = [
    "RefuelPlan",
    "solve_msc",
    "solve_tsp_stops",
    "EvrptwModel",
    "EvrptwSolution",
    "Violation",
    "build_evrptw_model",
    "enumerate_optimal",
    "evrptw_objective",
    "validate_evrptw",
    "Budget",
    "SolveStats",
    "solve_evrptw",
    "HeuristicSolution",
    "Subproblem",
    "solve_bilevel",
    "split_subproblems",
]
