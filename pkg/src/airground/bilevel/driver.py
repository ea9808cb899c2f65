"""Hierarchical baseline: stops, stop order, subproblems, stitched mission.

The full pipeline is stop selection (minimum cover), stop ordering (path
TSP), partition of tasks by nearest selected stop, one routing model per
consecutive stop pair, and finally stitching: the per-subproblem routes are
replayed through the mission environment, which applies the real rendezvous
timing (waiting, single-service queueing, recharge duration).  The reported
makespan is therefore exactly the environment's return for the emitted
action sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..errors import ContractViolationError, InfeasibleError
from ..mdp import (
    RECHARGE,
    RUNNING,
    SUCCESS,
    UAV,
    VISIT,
    Action,
    MissionEnv,
    step_record,
)
from ..rng import derive_seed
from ..scenario import Scenario, TeamConfig
from .evrptw import EvrptwModel, EvrptwSolution, build_evrptw_model, validate_evrptw
from .search import Budget, SolveStats, solve_evrptw
from .setcover import RefuelPlan, solve_msc
from .tsp import solve_tsp_stops

MAX_COPY_DOUBLINGS = 3


@dataclass
class Subproblem:
    index: int
    source: int  # scenario node id
    dest: int
    tasks: List[int]  # scenario node ids (task ids)
    window_lb_s: float  # ground-vehicle leg time source->dest on roads


@dataclass
class HeuristicSolution:
    subproblems: List[Subproblem]
    models: List[EvrptwModel]
    solutions: List[EvrptwSolution]
    reports: List[Dict[str, object]]
    actions: List[Tuple[str, int]]
    records: List[Dict[str, object]]
    rendezvous: List[Dict[str, float]]
    makespan_s: float

    @property
    def makespan_min(self) -> float:
        return self.makespan_s / 60.0


def _relay_chain(scenario: Scenario, a: int, b: int) -> List[int]:
    """Intermediate recharge nodes making the flight leg a->b tank-feasible.

    Breadth-first over all ground-capable nodes with one-tank hops, fewest
    hops first, flight length as the tie-break.  Empty when a->b already
    fits; raises when no chain exists at all.
    """
    cap = scenario.fuel.capacity_kj * (1 - 1e-9)
    fuel = scenario.fly_fuel_kj_matrix
    if fuel[a, b] <= cap:
        return []
    nodes = [int(v) for v in scenario.recharge_nodes]
    best: Dict[int, Tuple[int, float, List[int]]] = {a: (0, 0.0, [])}
    frontier = [a]
    while frontier:
        nxt = []
        for u in frontier:
            hops, length, path = best[u]
            for v in nodes + [b]:
                if v == u or fuel[u, v] > cap:
                    continue
                cand = (hops + 1, length + float(scenario.fly_dist_m[u, v]), path + [u])
                if v not in best or cand[:2] < best[v][:2]:
                    best[v] = cand
                    if v != b:
                        nxt.append(v)
        frontier = nxt
    if b not in best:
        raise InfeasibleError(
            f"no tank-feasible relocation chain between nodes {a} and {b}", detail=(a, b)
        )
    return best[b][2][1:]  # drop the leading source node


def split_subproblems(scenario: Scenario, plan: RefuelPlan) -> List[Subproblem]:
    """One subproblem per ordered stop; tasks follow their assigned stop.

    The first subproblem loops at the depot (source == dest) covering the
    depot-assigned tasks; subproblem k then runs from stop k-1 to stop k.
    Task sets partition the whole task list because the assignment maps every
    task to exactly one stop.  Window lower bounds are the road travel time
    of the subproblem's own leg: the ground vehicle cannot open the stop
    earlier than that, whatever waiting accumulated before.

    Stop pairs farther apart than one tank of flight get task-free relay
    subproblems spliced in, so the air vehicles can always follow the ground
    route legally.
    """
    stops = plan.stops
    by_stop: Dict[int, List[int]] = {s: [] for s in stops}
    for task, stop in sorted(plan.cover.items()):
        by_stop[stop].append(task)
    legs: List[Tuple[int, int, List[int]]] = [(stops[0], stops[0], by_stop[stops[0]])]
    for prev, stop in zip(stops, stops[1:]):
        for relay in _relay_chain(scenario, prev, stop):
            legs.append((prev, relay, []))
            prev = relay
        legs.append((prev, stop, by_stop[stop]))
    subs = []
    for k, (source, dest, tasks) in enumerate(legs):
        leg = 0.0 if source == dest else scenario.road_dist_m[source, dest] / scenario.team.v_g
        subs.append(
            Subproblem(index=k, source=source, dest=dest, tasks=tasks, window_lb_s=float(leg))
        )
    return subs


def _solve_subproblem(
    scenario: Scenario,
    sub: Subproblem,
    fleet: int,
    method: str,
    budget: Budget,
    seed: int,
) -> Tuple[EvrptwModel, EvrptwSolution, SolveStats]:
    """Solve one subproblem, doubling recharge copies if construction runs dry."""
    n_copies = fleet + 1
    for attempt in range(MAX_COPY_DOUBLINGS + 1):
        model = build_evrptw_model(
            scenario, sub.source, sub.dest, sub.tasks, fleet, sub.window_lb_s, n_copies
        )
        try:
            solution, stats = solve_evrptw(model, method, budget, seed)
            return model, solution, stats
        except InfeasibleError as err:
            if err.detail == "copies" and attempt < MAX_COPY_DOUBLINGS:
                n_copies *= 2
                continue
            raise
    raise AssertionError("unreachable")


def _sorties_from_solution(
    model: EvrptwModel, solution: EvrptwSolution
) -> List[List[List[Tuple[str, int]]]]:
    """Per-vehicle sortie action lists in scenario-node space.

    Each sortie is the visits up to and including the next recharge; the
    recharge action targets the subproblem's destination stop.
    """
    per_vehicle = []
    for route in solution.routes:
        sorties: List[List[Tuple[str, int]]] = []
        current: List[Tuple[str, int]] = []
        for v in route[1:]:
            if model.is_copy(v):
                current.append((RECHARGE, model.dest))
                sorties.append(current)
                current = []
            else:
                current.append((VISIT, model.scenario_node(v)))
        if current:
            raise AssertionError("route did not end with a recharge copy")
        per_vehicle.append(sorties)
    return per_vehicle


def _build_action_queues(
    subs: Sequence[Subproblem],
    models: Sequence[EvrptwModel],
    solutions: Sequence[EvrptwSolution],
    fleet: int,
) -> List[List[List[Tuple[str, int]]]]:
    """Flattened per-vehicle sortie queues, aligned across subproblems.

    Within a subproblem every vehicle must fly the same number of sorties so
    the phase structure stays synchronized; vehicles with fewer planned
    sorties park in place with a zero-length recharge at the stop they
    already occupy.
    """
    queues: List[List[List[Tuple[str, int]]]] = [[] for _ in range(fleet)]
    for sub, model, solution in zip(subs, models, solutions):
        per_vehicle = _sorties_from_solution(model, solution)
        ranks = max(len(s) for s in per_vehicle)
        for k in range(fleet):
            sorties = per_vehicle[k]
            padded = sorties + [[(RECHARGE, sub.dest)]] * (ranks - len(sorties))
            queues[k].extend(padded)
    return queues


def _stitch(
    scenario: Scenario,
    team: TeamConfig,
    queues: List[List[List[Tuple[str, int]]]],
    horizon: Optional[int] = None,
) -> Tuple[List[Tuple[str, int]], List[Dict[str, object]], List[Dict[str, float]], float]:
    """Drive the environment with the planned sorties; UGVs serve FIFO.

    The environment owns agent switching and all rendezvous timing; this
    controller only feeds each selected agent its next planned action (air
    vehicles) or the landing node of its earliest-landed pending customer
    (ground vehicles).
    """
    total_steps = sum(len(s) for q in queues for s in q) * 2 + 16
    env = MissionEnv(scenario, team, horizon=horizon if horizon is not None else total_steps)
    state = env.reset()
    cursors = [0] * len(queues)  # next sortie per vehicle
    offsets = [0] * len(queues)  # position within the current sortie
    actions: List[Tuple[str, int]] = []
    records: List[Dict[str, object]] = []
    rendezvous: List[Dict[str, float]] = []
    t = 0
    while env.is_terminal(state) == RUNNING:
        env.select_active_agent(state)
        agent = state.agent(state.active_agent)
        if agent.kind == UAV:
            k = agent.id
            if cursors[k] >= len(queues[k]):
                raise ContractViolationError(f"air vehicle {k} ran out of planned actions")
            sortie = queues[k][cursors[k]]
            kind, node = sortie[offsets[k]]
            offsets[k] += 1
            if offsets[k] >= len(sortie):
                cursors[k] += 1
                offsets[k] = 0
        else:
            queue = state.pending[agent.id]
            uav = min(
                (state.uavs[uid] for uid in queue), key=lambda u: (u.landed_at_s, u.id)
            )
            kind, node = RECHARGE, uav.landed_node
        outcome = env.step(state, Action(kind, node))
        records.append(step_record(t, agent, Action(kind, node), outcome.reward_s))
        actions.append((kind, node))
        if agent.kind != UAV:
            rendezvous.append(
                {
                    "ugv": agent.id,
                    "node": node,
                    "start_s": agent.clock_s - team.recharge_time_s,
                    "end_s": agent.clock_s,
                }
            )
        t += 1
    if env.is_terminal(state) != SUCCESS:
        raise ContractViolationError("stitched mission did not reach success")
    return actions, records, rendezvous, env.compute_return(state)


def solve_bilevel(
    scenario: Scenario,
    team: Optional[TeamConfig] = None,
    method: str = "gls",
    budget: Budget = Budget(),
    seed: int = 0,
) -> HeuristicSolution:
    """Full hierarchical solve; the trace replays cleanly in the environment."""
    team = team or scenario.team
    plan = solve_msc(scenario)
    over_range = scenario.fly_fuel_kj_matrix > scenario.fuel.capacity_kj * (1 - 1e-9)
    ordered = solve_tsp_stops(
        plan.stops, scenario.depot_node, scenario.road_dist_m, banned=over_range
    )
    plan = RefuelPlan(stops=ordered, cover=plan.cover)
    subs = split_subproblems(scenario, plan)

    models, solutions, reports = [], [], []
    for sub in subs:
        model, solution, stats = _solve_subproblem(
            scenario, sub, team.num_uavs, method, budget, derive_seed(seed, 23, sub.index)
        )
        models.append(model)
        solutions.append(solution)
        reports.append(
            {
                "subproblem": sub.index,
                "source": sub.source,
                "dest": sub.dest,
                "n_tasks": len(sub.tasks),
                "method": stats.method,
                "seed": stats.seed,
                "budget_iterations": budget.iterations,
                "iterations": stats.iterations,
                "objective_s": stats.objective_s,
                "violations": [v.tag for v in validate_evrptw(model, solution)],
            }
        )

    queues = _build_action_queues(subs, models, solutions, team.num_uavs)
    actions, records, rendezvous, makespan = _stitch(scenario, team, queues)
    return HeuristicSolution(
        subproblems=subs,
        models=models,
        solutions=solutions,
        reports=reports,
        actions=actions,
        records=records,
        rendezvous=rendezvous,
        makespan_s=makespan,
    )
