"""Online replanning: task injection and team changes mid-mission.

Replanning happens at recharge completions, when every air vehicle is parked
or freshly serviced and the mission state is clean to snapshot.  At each
trigger the payload mutates the live state (tasks appended with fresh ids,
agents added at the depot with the trigger-time clock, or highest-id agents
retired with their clocks kept for the makespan), then the planner decodes a
fresh continuation from the snapshot.  Execution follows the chosen
continuation until the next trigger fires or the mission ends.

Every executed step goes through the environment's action masks, so the
spliced mission is legal by construction; :func:`replay_replan` re-drives
the recorded segments from scratch as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolationError, InfeasibleError
from .evaluation import DRL_KINDS, MethodSpec
from .mdp import (
    RUNNING,
    SUCCESS,
    UAV,
    UGV,
    Action,
    MissionEnv,
    MissionState,
    step_record,
)
from .nn.rollout import DecodePolicy, rollout
from .rng import derive_seed
from .scenario import Scenario, TaskPoint, TeamConfig


@dataclass(frozen=True)
class ReplanEvent:
    trigger_recharge_index: Optional[int] = None  # fires after the n-th service
    trigger_time_s: Optional[float] = None  # or at the first service ending >= t
    add_tasks: Optional[Tuple[TaskPoint, ...]] = None
    set_team: Optional[TeamConfig] = None

    def __post_init__(self):
        if (self.trigger_recharge_index is None) == (self.trigger_time_s is None):
            raise ValueError("exactly one trigger kind must be set")
        if self.add_tasks is None and self.set_team is None:
            raise ValueError("event needs a payload")

    def fires(self, service_count: int, completion_s: float) -> bool:
        if self.trigger_recharge_index is not None:
            return service_count >= self.trigger_recharge_index
        return completion_s >= self.trigger_time_s


@dataclass
class Segment:
    scenario: Scenario
    team: TeamConfig
    horizon: int
    actions: List[Tuple[str, int]] = field(default_factory=list)
    event_report: Optional[Dict[str, object]] = None  # event applied at entry


@dataclass
class ReplanOutcome:
    segments: List[Segment]
    records: List[Dict[str, object]]
    makespan_s: float
    coverage: float
    final_scenario: Scenario
    event_reports: List[Dict[str, object]]

    @property
    def makespan_min(self) -> float:
        return self.makespan_s / 60.0


def _segment_horizon(state: MissionState) -> int:
    unvisited = int((~state.visited).sum())
    n_agents = len(state.agents)
    return state.step_count + 6 * max(unvisited, 1) + 12 * n_agents


def _apply_add_tasks(state: MissionState, new_tasks: Sequence[TaskPoint]) -> None:
    sc = state.scenario
    expected = list(range(sc.n_tasks, sc.n_tasks + len(new_tasks)))
    if [t.id for t in new_tasks] != expected:
        raise ContractViolationError(
            f"injected task ids must continue densely from {sc.n_tasks}"
        )
    radius = sc.coverage_radius_m()
    for t in new_tasks:
        near = min(
            float(np.hypot(sc.node_xy[g, 0] - t.x, sc.node_xy[g, 1] - t.y))
            for g in sc.recharge_nodes
        )
        if near > radius:
            raise InfeasibleError(
                f"injected task {t.id} lies beyond coverage of every recharge node",
                detail=t.id,
            )
    old_depot = sc.depot_node
    new_sc = sc.with_extra_tasks(list(new_tasks))
    state.scenario = new_sc
    state.visited = np.concatenate([state.visited, np.zeros(len(new_tasks), dtype=bool)])
    for agent in state.agents:
        if agent.node == old_depot:
            agent.node = new_sc.depot_node
        if agent.landed_node == old_depot:
            agent.landed_node = new_sc.depot_node


def _apply_set_team(state: MissionState, new_team: TeamConfig, switch_time_s: float) -> None:
    from .mdp import AgentState

    sc = state.scenario
    uavs, ugvs = state.uavs, state.ugvs
    # retire the highest-id extras; their clocks still bound the makespan
    for gone in uavs[new_team.num_uavs :]:
        state.retired_clocks.append(gone.clock_s)
        for queue in state.pending.values():
            if gone.id in queue:
                queue.remove(gone.id)
        for lst in state.assignments.values():
            if gone.id in lst:
                lst.remove(gone.id)
    for gone in ugvs[new_team.num_ugvs :]:
        state.retired_clocks.append(gone.clock_s)
        state.pending.pop(gone.id, None)
        state.assignments.pop(gone.id, None)
    kept_uavs = uavs[: new_team.num_uavs]
    kept_ugvs = ugvs[: new_team.num_ugvs]
    for i in range(len(kept_uavs), new_team.num_uavs):
        kept_uavs.append(
            AgentState(i, UAV, sc.depot_node, sc.fuel.capacity_kj, clock_s=switch_time_s)
        )
    for i in range(len(kept_ugvs), new_team.num_ugvs):
        kept_ugvs.append(
            AgentState(
                i, UGV, sc.depot_node, sc.fuel.capacity_kj,
                clock_s=switch_time_s, busy_until_s=switch_time_s, sortie_open=False,
            )
        )
    active = state.agent(state.active_agent)
    state.agents = kept_uavs + kept_ugvs
    state.team = new_team
    state.scenario = sc.with_team(new_team)
    try:
        state.active_agent = state.agents.index(active)
    except ValueError:
        state.active_agent = 0


def _plan_continuation(env: MissionEnv, state: MissionState, planner: MethodSpec, seed: int):
    if planner.kind not in DRL_KINDS:
        raise ContractViolationError(
            f"planner kind {planner.kind!r} does not support mid-mission snapshots"
        )
    strategy = "greedy" if planner.kind.endswith("greedy") else "sample"
    policy = DecodePolicy(strategy, planner.sample_n, seed=seed)
    best, _pool = rollout(
        state.scenario,
        state.team,
        planner.params,
        policy,
        selection=planner.selection,
        horizon=env.horizon,
        start_state=state,
    )
    return best


def dynamic_replan(
    scenario: Scenario,
    team: TeamConfig,
    planner: MethodSpec,
    events: Sequence[ReplanEvent],
    seed: int = 0,
) -> ReplanOutcome:
    """Execute the mission with online replanning at the given events."""
    triggers = [
        e.trigger_recharge_index if e.trigger_recharge_index is not None else e.trigger_time_s
        for e in events
    ]
    if any(b <= a for a, b in zip(triggers, triggers[1:])):
        raise ContractViolationError("event triggers must be strictly increasing")

    env = MissionEnv(scenario, team, selection=planner.selection)
    state = env.reset()
    env = MissionEnv(scenario, team, selection=planner.selection, horizon=_segment_horizon(state))
    segments = [Segment(scenario=state.scenario, team=state.team, horizon=env.horizon)]
    records: List[Dict[str, object]] = []
    event_reports: List[Dict[str, object]] = []
    pending_events = list(events)
    service_count = 0
    t = 0
    replan_round = 0

    while env.is_terminal(state) == RUNNING:
        plan = _plan_continuation(env, state.clone(), planner, derive_seed(seed, replan_round))
        replan_round += 1
        event_fired = False
        for kind, node in plan.actions:
            if env.is_terminal(state) != RUNNING:
                break
            env.select_active_agent(state)
            agent = state.agent(state.active_agent)
            outcome = env.step(state, Action(kind, node))
            records.append(step_record(t, agent, Action(kind, node), outcome.reward_s))
            segments[-1].actions.append((kind, node))
            t += 1
            if agent.kind == UGV:
                service_count += 1
                if pending_events and pending_events[0].fires(service_count, agent.clock_s):
                    event = pending_events.pop(0)
                    report = {
                        "service_index": service_count,
                        "time_s": agent.clock_s,
                        "status": "applied",
                    }
                    try:
                        if event.add_tasks:
                            _apply_add_tasks(state, event.add_tasks)
                            report["added"] = len(event.add_tasks)
                        if event.set_team:
                            _apply_set_team(state, event.set_team, agent.clock_s)
                            report["team"] = (event.set_team.num_uavs, event.set_team.num_ugvs)
                    except InfeasibleError as err:
                        report["status"] = "infeasible"
                        report["detail"] = str(err)
                    event_reports.append(report)
                    env = MissionEnv(
                        state.scenario,
                        state.team,
                        selection=planner.selection,
                        horizon=_segment_horizon(state),
                    )
                    segments.append(
                        Segment(
                            scenario=state.scenario,
                            team=state.team,
                            horizon=env.horizon,
                            event_report=report,
                        )
                    )
                    event_fired = True
                    break
        if not event_fired and env.is_terminal(state) == RUNNING:
            # plan exhausted without reaching a terminal state
            env.mark_failed(state)

    coverage = float(state.visited.sum()) / state.visited.size
    return ReplanOutcome(
        segments=segments,
        records=records,
        makespan_s=env.compute_return(state),
        coverage=coverage,
        final_scenario=state.scenario,
        event_reports=event_reports,
    )


def replay_replan(outcome: ReplanOutcome) -> float:
    """Independently re-drive all recorded segments; returns the makespan.

    Raises on any illegal action, non-monotone clock, or un-visited flag, so
    a passing replay certifies the spliced mission end to end.
    """
    first = outcome.segments[0]
    env = MissionEnv(first.scenario, first.team, horizon=first.horizon)
    state = env.reset()
    prev_clocks: Dict[Tuple[str, int], float] = {}
    visited_count = 0
    for seg in outcome.segments:
        if seg.event_report is not None and seg.event_report["status"] == "applied":
            if "added" in seg.event_report:
                new_tasks = seg.scenario.task_points[len(state.visited) :]
                _apply_add_tasks(state, new_tasks)
            if "team" in seg.event_report:
                active = state.agent(state.active_agent)
                _apply_set_team(state, seg.team, seg.event_report["time_s"])
            env = MissionEnv(seg.scenario, seg.team, horizon=seg.horizon)
        for kind, node in seg.actions:
            env.select_active_agent(state)
            agent = state.agent(state.active_agent)
            before = int(state.visited.sum())
            env.step(state, Action(kind, node))
            key = (agent.kind, agent.id)
            if key in prev_clocks and agent.clock_s < prev_clocks[key] - 1e-9:
                raise ContractViolationError("clock went backwards across the splice")
            prev_clocks[key] = agent.clock_s
            after = int(state.visited.sum())
            if after < before:
                raise ContractViolationError("a visited flag was cleared")
    return env.compute_return(state)
