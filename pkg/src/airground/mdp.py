"""Sequential-decision environment for cooperative UAV-UGV missions.

Missions alternate between two phases.  In the air phase every UAV in turn
flies one sortie: a run of visit actions ended by a recharge action that
parks it at a ground node.  Once all UAVs are parked, landed UAVs are
assigned to the road-nearest UGVs and the ground phase begins: each UGV
drives to its assigned landing nodes and recharges the parked UAVs, one at a
time.  A serviced UAV's clock absorbs any waiting plus the fixed recharge
time, and its tank is refilled only at that moment, so queueing delays show
up in the mission makespan.  The mission succeeds when every task point has
been visited and every UAV's final recharge has been serviced.

All transitions are deterministic; a state is owned by a single episode and
mutated in place by :meth:`MissionEnv.step`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolationError
from .scenario import Scenario, TeamConfig

UAV = "uav"
UGV = "ugv"

VISIT = "visit"
RECHARGE = "recharge"

RUNNING = "running"
SUCCESS = "success"
FAILURE = "failure"

#: Mission-failure penalty added to the return, in seconds (800 minutes).
FAILURE_PENALTY_S = 800.0 * 60.0

#: Tolerance for fuel-feasibility comparisons.
FUEL_EPS = 1e-9

SELECTION_SORTIE = "sortie"
SELECTION_PER_STEP = "per_step"


@dataclass(frozen=True)
class Action:
    kind: str  # VISIT or RECHARGE
    node: int

    def __post_init__(self):
        if self.kind not in (VISIT, RECHARGE):
            raise ValueError(f"unknown action kind {self.kind!r}")


@dataclass
class AgentState:
    id: int
    kind: str  # UAV or UGV
    node: int
    fuel_kj: float
    clock_s: float = 0.0
    landed_node: Optional[int] = None
    landed_at_s: Optional[float] = None
    busy_until_s: float = 0.0
    sortie_open: bool = True

    @property
    def is_landed(self) -> bool:
        return self.landed_node is not None


@dataclass
class MissionState:
    scenario: Scenario
    team: TeamConfig
    agents: List[AgentState]
    visited: np.ndarray  # bool per task id
    phase: str = "uav"
    active_agent: int = 0  # index into agents
    assignments: Dict[int, List[int]] = field(default_factory=dict)
    pending: Dict[int, List[int]] = field(default_factory=dict)
    failed: bool = False
    step_count: int = 0
    uav_turns: int = 0  # UAV decision steps taken (drives per-step selection)
    sortie_in_progress: bool = False
    retired_clocks: List[float] = field(default_factory=list)

    @property
    def uavs(self) -> List[AgentState]:
        return [a for a in self.agents if a.kind == UAV]

    @property
    def ugvs(self) -> List[AgentState]:
        return [a for a in self.agents if a.kind == UGV]

    def agent(self, idx: int) -> AgentState:
        return self.agents[idx]

    def clone(self) -> "MissionState":
        c = copy.copy(self)
        c.agents = [copy.copy(a) for a in self.agents]
        c.visited = self.visited.copy()
        c.assignments = {k: list(v) for k, v in self.assignments.items()}
        c.pending = {k: list(v) for k, v in self.pending.items()}
        c.retired_clocks = list(self.retired_clocks)
        return c


@dataclass
class StepOutcome:
    reward_s: float
    next_state: MissionState
    terminal: bool


class MissionEnv:
    """Deterministic mission environment over a fixed scenario and team.

    ``selection`` picks the agent-switching rule: ``sortie`` hands control to
    the open-sortie UAV with the smallest clock and keeps it until its sortie
    closes; ``per_step`` rotates through open UAVs round-robin after every
    single action.  The ground phase behaves identically in both modes.
    """

    def __init__(
        self,
        scenario: Scenario,
        team: Optional[TeamConfig] = None,
        selection: str = SELECTION_SORTIE,
        horizon: Optional[int] = None,
    ):
        if selection not in (SELECTION_SORTIE, SELECTION_PER_STEP):
            raise ValueError(f"unknown selection mode {selection!r}")
        self.scenario = scenario
        self.team = team or scenario.team
        self.selection = selection
        self.horizon = horizon if horizon is not None else 4 * scenario.n_tasks

    # -- lifecycle ----------------------------------------------------------

    def reset(self) -> MissionState:
        sc, team = self.scenario, self.team
        depot = sc.depot_node
        agents = []
        for i in range(team.num_uavs):
            agents.append(AgentState(i, UAV, depot, sc.fuel.capacity_kj))
        for i in range(team.num_ugvs):
            agents.append(AgentState(i, UGV, depot, sc.fuel.capacity_kj, sortie_open=False))
        return MissionState(
            scenario=sc,
            team=team,
            agents=agents,
            visited=np.zeros(sc.n_tasks, dtype=bool),
            active_agent=0,
        )

    # -- action space -------------------------------------------------------

    def uav_action_count(self, state: MissionState) -> int:
        return 2 * state.scenario.n_nodes

    def action_from_index(self, state: MissionState, idx: int) -> Action:
        n = state.scenario.n_nodes
        agent = state.agent(state.active_agent)
        if agent.kind == UAV:
            if idx < n:
                return Action(VISIT, idx)
            return Action(RECHARGE, idx - n)
        return Action(RECHARGE, idx)

    def action_index(self, state: MissionState, action: Action) -> int:
        n = state.scenario.n_nodes
        agent = state.agent(state.active_agent)
        if agent.kind == UAV and action.kind == RECHARGE:
            return n + action.node
        return action.node

    def feasible_actions(self, state: MissionState) -> np.ndarray:
        """Boolean mask over the active agent's action space.

        UAV layout: ``[visit node 0..n-1, recharge node 0..n-1]`` over the
        augmented node space (depot last).  A visit is feasible when the node
        is an unvisited task, reachable on current fuel, and some recharge
        node remains reachable afterwards.  A recharge is feasible when the
        ground node is reachable on current fuel.  UGV layout: one entry per
        node, true exactly at landing nodes of its assigned, still-parked
        UAVs.  An all-false UAV mask signals mission failure to the caller.
        """
        sc = state.scenario
        agent = state.agent(state.active_agent)
        n = sc.n_nodes
        if agent.kind == UGV:
            mask = np.zeros(n, dtype=bool)
            for uid in state.pending.get(agent.id, ()):
                uav = state.uavs[uid]
                if uav.landed_node is not None:
                    mask[uav.landed_node] = True
            return mask

        fuel = agent.fuel_kj
        cost_out = sc.fly_fuel_kj_row(agent.node)
        recharge_ok = np.zeros(n, dtype=bool)
        rn = sc.recharge_nodes
        recharge_ok[rn] = cost_out[rn] <= fuel + FUEL_EPS

        visit_ok = np.zeros(n, dtype=bool)
        unvisited = np.flatnonzero(~state.visited)
        if unvisited.size:
            reach = cost_out[unvisited] <= fuel + FUEL_EPS
            cand = unvisited[reach]
            if cand.size:
                # rule out nodes that would strand the UAV: after the visit a
                # recharge node must still be within reach
                onward = sc.fly_fuel_kj_matrix[np.ix_(cand, rn)].min(axis=1)
                visit_ok[cand] = cost_out[cand] + onward <= fuel + FUEL_EPS
        return np.concatenate([visit_ok, recharge_ok])

    def _action_feasible(self, state: MissionState, action: Action) -> bool:
        mask = self.feasible_actions(state)
        return bool(mask[self.action_index(state, action)])

    # -- transition -----------------------------------------------------------

    def step(self, state: MissionState, action: Action) -> StepOutcome:
        if not self._action_feasible(state, action):
            raise ContractViolationError(
                f"masked action {action} for agent {state.active_agent}"
            )
        agent = state.agent(state.active_agent)
        if agent.kind == UAV:
            reward = self._step_uav(state, agent, action)
            state.uav_turns += 1
        else:
            reward = self._step_ugv(state, agent, action)
        state.step_count += 1
        if state.step_count > self.horizon:
            state.failed = True
        return StepOutcome(reward, state, self.is_terminal(state) != RUNNING)

    def _step_uav(self, state: MissionState, agent: AgentState, action: Action) -> float:
        sc = state.scenario
        t_fly = sc.fly_time_s(agent.node, action.node)
        agent.fuel_kj -= sc.fly_fuel_kj(agent.node, action.node)
        agent.clock_s += t_fly
        agent.node = action.node
        if action.kind == VISIT:
            state.visited[action.node] = True
            state.sortie_in_progress = True
        else:
            agent.landed_node = action.node
            agent.landed_at_s = agent.clock_s
            agent.sortie_open = False
            state.sortie_in_progress = False
        return t_fly

    def _step_ugv(self, state: MissionState, agent: AgentState, action: Action) -> float:
        sc = state.scenario
        queue = state.pending[agent.id]
        uav = None
        for uid in queue:
            cand = state.uavs[uid]
            if cand.landed_node == action.node:
                uav = cand
                break
        if uav is None:  # unreachable: masked earlier
            raise ContractViolationError("no pending UAV at the chosen node")
        leg_s = sc.road_time_s(agent.node, action.node)
        arrival = agent.clock_s + leg_s
        start = max(uav.landed_at_s, arrival, agent.busy_until_s)
        end = start + state.team.recharge_time_s
        agent.node = action.node
        agent.clock_s = end
        agent.busy_until_s = end
        uav.fuel_kj = sc.fuel.capacity_kj
        uav.clock_s = end
        uav.landed_node = None
        uav.landed_at_s = None
        queue.remove(uav.id)
        return leg_s + state.team.recharge_time_s

    # -- agent selection -------------------------------------------------------

    def assign_uavs_to_ugvs(self, state: MissionState) -> Dict[int, List[int]]:
        """Greedy proximity assignment of parked UAVs, in landing-time order.

        Each landed UAV goes to the UGV whose current position is road-nearest
        to its landing node; ties break toward the lower UGV id.  The per-UGV
        lists keep landing-time order, which is also the service order.
        """
        sc = state.scenario
        out: Dict[int, List[int]] = {g.id: [] for g in state.ugvs}
        landed = [u for u in state.uavs if u.is_landed]
        landed.sort(key=lambda u: (u.landed_at_s, u.id))
        for uav in landed:
            best = min(
                state.ugvs,
                key=lambda g: (sc.road_dist_m[g.node, uav.landed_node], g.id),
            )
            out[best.id].append(uav.id)
        return out

    def select_active_agent(self, state: MissionState) -> int:
        """Pick the agent owed the next decision, flipping phases as needed.

        Returns the index into ``state.agents``; also updates
        ``state.active_agent``, recomputes UAV-UGV assignments on entry to the
        ground phase, and reopens sorties on return to the air phase.
        """
        if self.is_terminal(state) != RUNNING:
            raise ContractViolationError("select_active_agent on a terminal state")
        if state.phase == "uav":
            idx = self._select_uav(state)
            if idx is not None:
                return idx
            state.phase = "ugv"
            state.assignments = self.assign_uavs_to_ugvs(state)
            state.pending = {k: list(v) for k, v in state.assignments.items()}
        idx = self._select_ugv(state)
        if idx is not None:
            return idx
        # ground round complete: a non-terminal state goes back to the air phase
        state.phase = "uav"
        for uav in state.uavs:
            uav.sortie_open = True
        idx = self._select_uav(state)
        if idx is None:
            raise ContractViolationError("no selectable agent")
        return idx

    def _select_uav(self, state: MissionState) -> Optional[int]:
        uavs = state.uavs
        cur = state.agent(state.active_agent)
        if self.selection == SELECTION_SORTIE:
            # a UAV mid-sortie keeps control even if its clock grew past others
            if (
                state.sortie_in_progress
                and cur.kind == UAV
                and cur.sortie_open
                and state.phase == "uav"
            ):
                return state.active_agent
            open_ = [u for u in uavs if u.sortie_open]
            if not open_:
                return None
            pick = min(open_, key=lambda u: (u.clock_s, u.id))
        else:
            open_ids = [u.id for u in uavs if u.sortie_open]
            if not open_ids:
                return None
            start = state.uav_turns % len(uavs)
            order = [(start + k) % len(uavs) for k in range(len(uavs))]
            pick_id = next(i for i in order if i in open_ids)
            pick = uavs[pick_id]
        state.active_agent = state.agents.index(pick)
        return state.active_agent

    def _select_ugv(self, state: MissionState) -> Optional[int]:
        cur = state.agent(state.active_agent)
        if cur.kind == UGV and state.pending.get(cur.id):
            return state.active_agent
        busy = [g for g in state.ugvs if state.pending.get(g.id)]
        if not busy:
            return None
        pick = min(busy, key=lambda g: (g.clock_s, g.id))
        state.active_agent = state.agents.index(pick)
        return state.active_agent

    # -- termination ---------------------------------------------------------

    def is_terminal(self, state: MissionState) -> str:
        if state.failed or state.step_count > self.horizon:
            return FAILURE
        if (
            bool(state.visited.all())
            and all(not u.sortie_open and not u.is_landed for u in state.uavs)
        ):
            return SUCCESS
        return RUNNING

    def mark_failed(self, state: MissionState) -> None:
        state.failed = True

    def compute_return(self, state: MissionState) -> float:
        """Mission return in seconds: max agent clock, plus the failure penalty."""
        status = self.is_terminal(state)
        if status == RUNNING:
            raise ContractViolationError("compute_return on a non-terminal state")
        clocks = [a.clock_s for a in state.agents] + state.retired_clocks
        total = max(clocks)
        if status == FAILURE:
            total += FAILURE_PENALTY_S
        return total


def step_record(
    t: int, agent: AgentState, action: Action, reward_s: float
) -> Dict[str, object]:
    """Flat trace record for one step, suited to JSON-lines export."""
    return {
        "t": t,
        "agent_kind": agent.kind,
        "agent_id": agent.id,
        "action_kind": action.kind,
        "action_node": action.node,
        "reward_s": reward_s,
        "fuel_kj": agent.fuel_kj,
        "clock_s": agent.clock_s,
    }


def replay_actions(
    scenario: Scenario,
    team: Optional[TeamConfig],
    actions: Sequence[Tuple[str, int]],
    selection: str = SELECTION_SORTIE,
    horizon: Optional[int] = None,
) -> Tuple[List[Dict[str, object]], MissionState, MissionEnv]:
    """Drive the environment through a recorded action sequence.

    Raises :class:`ContractViolationError` on any masked action, making this
    the arbiter for "does this plan replay legally".  Returns the per-step
    trace records, the final state and the environment used.
    """
    env = MissionEnv(scenario, team, selection=selection, horizon=horizon)
    state = env.reset()
    records: List[Dict[str, object]] = []
    for t, (kind, node) in enumerate(actions):
        if env.is_terminal(state) != RUNNING:
            raise ContractViolationError(f"trailing action {t} after terminal state")
        env.select_active_agent(state)
        agent = state.agent(state.active_agent)
        outcome = env.step(state, Action(kind, int(node)))
        records.append(step_record(t, agent, Action(kind, int(node)), outcome.reward_s))
    return records, state, env
