"""Energy-constrained routing model with time windows for one subproblem.

Vertices are the source stop (index 0), the subproblem's task points
(1..m), and duplicated instances of the destination stop (m+1..m+c), one per
possible recharge event.  Every air vehicle starts at the source, may pass
through destination copies mid-route (each pass is one recharge event that
refills the tank), and must end on a copy.  Copy arrival times are clamped
to the window lower bound: the ground vehicle cannot recharge anyone before
it reaches the stop.

The validator checks a claimed solution (routes plus arrival-time and fuel
traces) constraint by constraint and returns the violated tags instead of
raising, so corrupted solutions can be diagnosed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InfeasibleError, SizeLimitError

TOL = 1e-6

# Constraint tags reported by the validator.
VISIT_ONCE = "visit-once"
FUEL_RESET = "fuel-reset-at-stop"
FUEL_BOUNDS = "fuel-bounds"
FUEL_DECREASE = "fuel-decrease"
TIME_WINDOW = "time-window"
TIME_PROPAGATION = "time-propagation"
FLOW = "flow-continuity"
ROUTE_START = "route-start"
ROUTE_END = "route-end"
ARC_FUEL_FEASIBLE = "arc-fuel-feasible"

ALL_TAGS = (
    VISIT_ONCE,
    FUEL_RESET,
    FUEL_BOUNDS,
    FUEL_DECREASE,
    TIME_WINDOW,
    TIME_PROPAGATION,
    FLOW,
    ROUTE_START,
    ROUTE_END,
    ARC_FUEL_FEASIBLE,
)


@dataclass(frozen=True)
class Violation:
    tag: str
    vertex: int
    detail: str


@dataclass
class EvrptwModel:
    source: int  # scenario node id of the source stop
    dest: int  # scenario node id of the destination stop
    tasks: List[int]  # scenario node ids of the task vertices
    fleet: int
    n_copies: int
    capacity_kj: float
    window_lb_s: float  # earliest recharge time at any destination copy
    arc_time_s: np.ndarray
    arc_fuel_kj: np.ndarray
    big_l1: float = 0.0
    big_l2: float = 0.0

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_vertices(self) -> int:
        return 1 + self.n_tasks + self.n_copies

    def is_copy(self, v: int) -> bool:
        return v > self.n_tasks

    def is_task(self, v: int) -> bool:
        return 1 <= v <= self.n_tasks

    def first_copy(self) -> int:
        return self.n_tasks + 1

    def scenario_node(self, v: int) -> int:
        if v == 0:
            return self.source
        if self.is_task(v):
            return self.tasks[v - 1]
        return self.dest


def build_evrptw_model(
    scenario,
    source: int,
    dest: int,
    tasks: Sequence[int],
    fleet: int,
    window_lb_s: float,
    n_copies: Optional[int] = None,
) -> EvrptwModel:
    """Assemble the routing graph for one subproblem from scenario geometry.

    Flight legs are straight lines at cruise speed.  Each task must fit into
    a single tank through some recharge anchor (out from the source or
    out-and-back from the destination), otherwise the instance is infeasible
    and the offending task is reported.
    """
    tasks = list(tasks)
    n_copies = n_copies if n_copies is not None else fleet + 1
    nodes = [source] + tasks + [dest] * n_copies
    xy = scenario.node_xy[nodes]
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    arc_time = dist / scenario.team.v_a
    kj_per_m = scenario.fuel.power_w(scenario.team.v_a) / scenario.team.v_a / 1000.0
    arc_fuel = dist * kj_per_m
    cap = scenario.fuel.capacity_kj
    horizon_guess = 4 * max(len(tasks), 1) * float(arc_time.mean())
    model = EvrptwModel(
        source=source,
        dest=dest,
        tasks=tasks,
        fleet=fleet,
        n_copies=n_copies,
        capacity_kj=cap,
        window_lb_s=float(window_lb_s),
        arc_time_s=arc_time,
        arc_fuel_kj=arc_fuel,
        big_l1=cap,
        big_l2=horizon_guess,
    )
    check_model_feasible(model)
    return model


def check_model_feasible(model: EvrptwModel) -> None:
    """Every task must fit into a single tank through some recharge anchor.

    A task can ride an outbound sortie (source -> task -> destination) or an
    out-and-back sortie from the destination; if neither fits, no route can
    serve it and the violating task is reported.
    """
    dest_v = model.n_tasks + 1
    for k in range(1, model.n_tasks + 1):
        via_source = model.arc_fuel_kj[0, k] + model.arc_fuel_kj[k, dest_v]
        out_and_back = 2 * model.arc_fuel_kj[k, dest_v]
        if via_source > model.capacity_kj + TOL and out_and_back > model.capacity_kj + TOL:
            raise InfeasibleError(
                f"task node {model.tasks[k - 1]} is not fuel-reachable between "
                f"stops {model.source} and {model.dest}",
                detail=model.tasks[k - 1],
            )


@dataclass
class EvrptwSolution:
    routes: List[List[int]]  # per vehicle: vertex ids, source first, copy last
    arrival_s: List[List[float]] = field(default_factory=list)
    fuel_kj: List[List[float]] = field(default_factory=list)

    def recharge_events(self, model: EvrptwModel) -> int:
        return sum(1 for r in self.routes for v in r if model.is_copy(v))


def canonicalize(model: EvrptwModel, routes: List[List[int]]) -> EvrptwSolution:
    """Fill in arrival-time and arrival-fuel traces implied by the routes."""
    arrivals, fuels = [], []
    for route in routes:
        t, f = 0.0, model.capacity_kj
        ts, fs = [0.0], [model.capacity_kj]
        for u, v in zip(route, route[1:]):
            t = t + model.arc_time_s[u, v]
            f = f - model.arc_fuel_kj[u, v]
            if model.is_copy(v):
                t = max(t, model.window_lb_s)
            ts.append(t)
            fs.append(f)
            if model.is_copy(v):
                f = model.capacity_kj
        arrivals.append(ts)
        fuels.append(fs)
    return EvrptwSolution(routes=[list(r) for r in routes], arrival_s=arrivals, fuel_kj=fuels)


def evrptw_objective(model: EvrptwModel, solution: EvrptwSolution) -> float:
    """Total flight time over all routes (waits excluded)."""
    total = 0.0
    for route in solution.routes:
        for u, v in zip(route, route[1:]):
            total += model.arc_time_s[u, v]
    return float(total)


def validate_evrptw(model: EvrptwModel, solution: EvrptwSolution) -> List[Violation]:
    """All constraint violations of a claimed solution (empty means valid).

    Structural checks (task coverage, route shape, copy usage) come from the
    routes; numeric checks (fuel bounds and decrease, window and time
    propagation) are applied to the solution's claimed traces so that
    corrupted or shifted traces are caught, with 1e-6 tolerance.
    """
    out: List[Violation] = []
    routes = solution.routes
    sol = solution
    if not sol.arrival_s or not sol.fuel_kj:
        sol = canonicalize(model, routes)

    if len(routes) != model.fleet:
        out.append(
            Violation(ROUTE_START, 0, f"expected {model.fleet} routes, got {len(routes)}")
        )

    seen_tasks: Dict[int, int] = {}
    seen_copies: Dict[int, int] = {}
    for r_idx, route in enumerate(routes):
        if not route or route[0] != 0:
            out.append(Violation(ROUTE_START, route[0] if route else -1, f"route {r_idx} must start at the source"))
            continue
        if not model.is_copy(route[-1]):
            out.append(Violation(ROUTE_END, route[-1], f"route {r_idx} must end at a destination copy"))
        for v in route[1:]:
            if v == 0:
                out.append(Violation(FLOW, v, f"route {r_idx} revisits the source"))
            elif model.is_task(v):
                seen_tasks[v] = seen_tasks.get(v, 0) + 1
            elif model.is_copy(v):
                seen_copies[v] = seen_copies.get(v, 0) + 1
            else:
                out.append(Violation(FLOW, v, f"route {r_idx} has unknown vertex {v}"))

    for v in range(1, model.n_tasks + 1):
        count = seen_tasks.get(v, 0)
        if count != 1:
            out.append(Violation(VISIT_ONCE, v, f"task vertex visited {count} times"))
    for v, count in seen_copies.items():
        if count > 1:
            out.append(Violation(FLOW, v, f"destination copy used {count} times"))

    for r_idx, route in enumerate(routes):
        if not route or route[0] != 0:
            continue
        ts, fs = sol.arrival_s[r_idx], sol.fuel_kj[r_idx]
        if len(ts) != len(route) or len(fs) != len(route):
            out.append(Violation(FLOW, route[0], f"route {r_idx} trace length mismatch"))
            continue
        if abs(fs[0] - model.capacity_kj) > TOL:
            out.append(Violation(FUEL_RESET, 0, f"route {r_idx} does not start with a full tank"))
        for k in range(1, len(route)):
            u, v = route[k - 1], route[k]
            # departure fuel: full after the source or any copy
            dep_fuel = model.capacity_kj if (u == 0 or model.is_copy(u)) else fs[k - 1]
            arc_f = model.arc_fuel_kj[u, v]
            arc_t = model.arc_time_s[u, v]
            if arc_f > dep_fuel + TOL:
                out.append(
                    Violation(ARC_FUEL_FEASIBLE, v, f"arc {u}->{v} needs {arc_f:.6f} kJ, has {dep_fuel:.6f}")
                )
            if fs[k] < -TOL or fs[k] > model.capacity_kj + TOL:
                out.append(Violation(FUEL_BOUNDS, v, f"fuel {fs[k]:.6f} outside [0, capacity]"))
            if fs[k] > dep_fuel - arc_f + TOL:
                tag = FUEL_RESET if (u == 0 or model.is_copy(u)) else FUEL_DECREASE
                out.append(
                    Violation(tag, v, f"fuel did not decrease by the arc cost on {u}->{v}")
                )
            if ts[k] < ts[k - 1] + arc_t - TOL:
                out.append(
                    Violation(TIME_PROPAGATION, v, f"arrival at {v} earlier than travel allows")
                )
            if model.is_copy(v) and ts[k] < model.window_lb_s - TOL:
                out.append(
                    Violation(TIME_WINDOW, v, f"recharge at {ts[k]:.6f}s before window {model.window_lb_s:.6f}s")
                )
    return out


def enumerate_optimal(
    model: EvrptwModel, max_tasks: int = 6
) -> Tuple[float, EvrptwSolution]:
    """Exhaustive single-vehicle optimum: permutations x recharge patterns.

    Every task order is tried with every pattern of recharge insertions
    (before any task; the final recharge is mandatory), bounded by the
    available destination copies.  Infeasible candidates are discarded by the
    validator, so this is a full enumeration of the solution space and serves
    as the ground-truth oracle for the metaheuristics.
    """
    if model.fleet != 1:
        raise SizeLimitError("enumeration oracle supports a single vehicle")
    if model.n_tasks > max_tasks:
        raise SizeLimitError(f"enumeration oracle limited to {max_tasks} tasks")
    best: Optional[Tuple[float, List[int]]] = None
    task_vertices = list(range(1, model.n_tasks + 1))
    max_inserts = model.n_copies - 1
    for perm in itertools.permutations(task_vertices):
        for pattern in itertools.product((0, 1), repeat=len(perm)):
            if sum(pattern) > max_inserts:
                continue
            route = [0]
            copy_cursor = model.first_copy()
            for flag, v in zip(pattern, perm):
                if flag:
                    route.append(copy_cursor)
                    copy_cursor += 1
                route.append(v)
            route.append(copy_cursor)
            sol = canonicalize(model, [route])
            if validate_evrptw(model, sol):
                continue
            obj = evrptw_objective(model, sol)
            if best is None or obj < best[0] - 1e-12:
                best = (obj, route)
    if best is None:
        raise InfeasibleError("no feasible single-vehicle route exists")
    return best[0], canonicalize(model, [best[1]])
