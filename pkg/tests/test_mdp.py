import numpy as np
import pytest

from airground.errors import ContractViolationError
from airground.mdp import (
    FAILURE,
    FAILURE_PENALTY_S,
    RECHARGE,
    RUNNING,
    SUCCESS,
    VISIT,
    Action,
    MissionEnv,
    replay_actions,
)
from airground.scenario import TeamConfig, generate_scenario

from conftest import make_line_scenario


def random_episode(scenario, seed, selection="sortie", horizon=None):
    env = MissionEnv(scenario, selection=selection, horizon=horizon)
    state = env.reset()
    rng = np.random.default_rng(seed)
    steps = []
    while env.is_terminal(state) == RUNNING:
        env.select_active_agent(state)
        agent = state.agent(state.active_agent)
        idxs = np.flatnonzero(env.feasible_actions(state))
        if idxs.size == 0:
            env.mark_failed(state)
            break
        action = env.action_from_index(state, int(rng.choice(idxs)))
        out = env.step(state, action)
        steps.append((agent.kind, agent.id, action, out.reward_s, agent.clock_s))
    return env, state, steps


class TestReset:
    def test_all_agents_at_depot(self, u15g5):
        env = MissionEnv(u15g5)
        state = env.reset()
        for a in state.agents:
            assert a.node == u15g5.depot_node
            assert a.clock_s == 0.0
        for uav in state.uavs:
            assert uav.fuel_kj == u15g5.fuel.capacity_kj

    def test_visited_sums_to_zero(self, u15g5):
        state = MissionEnv(u15g5).reset()
        assert int(state.visited.sum()) == 0

    def test_reset_is_pure(self, u15g5):
        env = MissionEnv(u15g5)
        a, b = env.reset(), env.reset()
        assert [vars(x) for x in a.agents] == [vars(x) for x in b.agents]
        assert np.array_equal(a.visited, b.visited)
        assert (a.phase, a.active_agent) == (b.phase, b.active_agent)


class TestFeasibleActions:
    def test_stranding_visit_masked(self):
        # aerial point at 3 km; fuel loaded to exactly the outbound cost, so
        # the visit would strand the UAV away from every recharge node
        sc = make_line_scenario([(3000.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        env.select_active_agent(state)
        uav = state.uavs[0]
        uav.fuel_kj = sc.fly_fuel_kj(sc.depot_node, 0)
        mask = env.feasible_actions(state)
        assert not mask[0]  # visit aerial task 0
        assert mask[sc.n_nodes + sc.depot_node]  # recharging in place stays open

    def test_reachable_visit_allowed_with_full_tank(self):
        sc = make_line_scenario([(3000.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        env.select_active_agent(state)
        mask = env.feasible_actions(state)
        assert mask[0]

    def test_last_unvisited_point(self):
        sc = make_line_scenario([(500.0, 0.0), (900.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        env.select_active_agent(state)
        state.visited[0] = True
        state.visited[2] = True  # the ground task
        mask = env.feasible_actions(state)
        visits = np.flatnonzero(mask[: sc.n_nodes])
        assert visits.tolist() == [1]
        assert mask[sc.n_nodes :].any()

    def test_ugv_mask_only_assigned_landed(self):
        sc = make_line_scenario(
            [(500.0, 0.0)], ground_road_nodes=(1, 2), team=TeamConfig(2, 1)
        )
        env = MissionEnv(sc)
        state = env.reset()
        g3 = 1  # ground task id at road node 1
        uav0, uav1 = state.uavs
        uav0.landed_node = g3
        uav0.landed_at_s = 100.0
        uav0.sortie_open = False
        # uav1 stays airborne
        state.phase = "ugv"
        state.assignments = {0: [0]}
        state.pending = {0: [0]}
        state.active_agent = state.agents.index(state.ugvs[0])
        mask = env.feasible_actions(state)
        assert np.flatnonzero(mask).tolist() == [g3]


class TestStep:
    def test_visit_reward_and_fuel(self):
        sc = make_line_scenario([(600.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        env.select_active_agent(state)
        f0 = state.uavs[0].fuel_kj
        out = env.step(state, Action(VISIT, 0))
        assert out.reward_s == pytest.approx(60.0)
        assert state.uavs[0].fuel_kj == pytest.approx(f0 - 11.91594, abs=1e-9)
        assert bool(state.visited[0])

    def test_service_timing_max_then_add(self):
        sc = make_line_scenario([(500.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        g = 1
        uav = state.uavs[0]
        uav.node = g
        uav.landed_node = g
        uav.landed_at_s = 1000.0
        uav.clock_s = 1000.0
        uav.sortie_open = False
        uav.fuel_kj = 5.0
        ugv = state.ugvs[0]
        leg = sc.road_time_s(sc.depot_node, g)
        ugv.clock_s = 1200.0 - leg
        ugv.busy_until_s = ugv.clock_s
        state.phase = "ugv"
        state.assignments = {0: [0]}
        state.pending = {0: [0]}
        state.active_agent = state.agents.index(ugv)
        out = env.step(state, Action(RECHARGE, g))
        assert ugv.clock_s == pytest.approx(1500.0)
        assert uav.clock_s == pytest.approx(1500.0)
        assert uav.fuel_kj == pytest.approx(287.7)
        assert out.reward_s == pytest.approx(leg + 300.0)

    def test_second_service_waits_for_first(self):
        sc = make_line_scenario(
            [(500.0, 0.0)], ground_road_nodes=(1,), team=TeamConfig(2, 1)
        )
        env = MissionEnv(sc)
        state = env.reset()
        g = 1
        for uav, t_land in zip(state.uavs, (1000.0, 1100.0)):
            uav.node = g
            uav.landed_node = g
            uav.landed_at_s = t_land
            uav.clock_s = t_land
            uav.sortie_open = False
        ugv = state.ugvs[0]
        ugv.node = g
        ugv.clock_s = 1200.0
        ugv.busy_until_s = 1200.0
        state.phase = "ugv"
        state.assignments = {0: [0, 1]}
        state.pending = {0: [0, 1]}
        state.active_agent = state.agents.index(ugv)
        env.step(state, Action(RECHARGE, g))
        assert state.uavs[0].clock_s == pytest.approx(1500.0)
        env.step(state, Action(RECHARGE, g))
        assert state.uavs[1].clock_s == pytest.approx(1800.0)

    def test_masked_action_rejected(self):
        sc = make_line_scenario([(600.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        env.select_active_agent(state)
        state.visited[0] = True
        with pytest.raises(ContractViolationError):
            env.step(state, Action(VISIT, 0))

    def test_step_deterministic(self):
        sc = make_line_scenario([(600.0, 0.0), (900.0, 200.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        env.select_active_agent(state)
        twin = state.clone()
        out_a = env.step(state, Action(VISIT, 0))
        out_b = env.step(twin, Action(VISIT, 0))
        assert out_a.reward_s == out_b.reward_s
        assert vars(state.uavs[0]) == vars(twin.uavs[0])


class TestAgentSelection:
    def test_worked_example_ordering(self):
        # 3 UAVs with clocks {105, 100, 110} min and 2 UGVs at {50, 60} min:
        # air order UAV1, UAV0, UAV2; then UGV0, UGV1 with proximity
        # assignment sending UAV0+UAV2 to UGV0 and UAV1 to UGV1.
        sc = make_line_scenario(
            [(500.0, 500.0)], ground_road_nodes=(1, 2), team=TeamConfig(3, 2)
        )
        env = MissionEnv(sc)
        state = env.reset()
        g_near, g_far = 1, 2  # ground task ids at road nodes 1 and 2
        for uav, clock in zip(state.uavs, (105.0 * 60, 100.0 * 60, 110.0 * 60)):
            uav.clock_s = clock
        ugv0, ugv1 = state.ugvs
        ugv0.node = g_near
        ugv0.clock_s = 50.0 * 60
        ugv1.node = g_far
        ugv1.clock_s = 60.0 * 60
        order = []
        for _ in range(3):
            idx = env.select_active_agent(state)
            agent = state.agent(idx)
            order.append((agent.kind, agent.id))
            agent.sortie_open = False
            agent.landed_node = g_near if agent.id in (0, 2) else g_far
            agent.landed_at_s = agent.clock_s
            agent.node = agent.landed_node
        assert order == [("uav", 1), ("uav", 0), ("uav", 2)]

        idx = env.select_active_agent(state)
        assert (state.agent(idx).kind, state.agent(idx).id) == ("ugv", 0)
        assert state.assignments == {0: [0, 2], 1: [1]}
        state.pending[0] = []
        idx = env.select_active_agent(state)
        assert (state.agent(idx).kind, state.agent(idx).id) == ("ugv", 1)

    def test_clock_tie_breaks_to_lower_id(self):
        sc = make_line_scenario(
            [(500.0, 0.0)], ground_road_nodes=(1,), team=TeamConfig(2, 1)
        )
        env = MissionEnv(sc)
        state = env.reset()
        idx = env.select_active_agent(state)
        assert state.agent(idx).id == 0

    def test_single_pair_alternates_phases(self):
        sc = make_line_scenario(
            [(500.0, 0.0), (800.0, 300.0), (300.0, 400.0)], ground_road_nodes=(1,)
        )
        env, state, steps = random_episode(sc, seed=5, horizon=200)
        assert env.is_terminal(state) == SUCCESS
        kinds = [k for k, *_ in steps]
        # every ugv step is isolated: exactly one service per ground phase
        for i, k in enumerate(kinds):
            if k == "ugv":
                assert i > 0 and kinds[i - 1] == "uav"

    def test_equidistant_ugvs_prefer_lower_id(self):
        sc = make_line_scenario(
            [(500.0, 0.0)], ground_road_nodes=(1,), team=TeamConfig(1, 2)
        )
        env = MissionEnv(sc)
        state = env.reset()
        uav = state.uavs[0]
        uav.landed_node = 1
        uav.landed_at_s = 10.0
        uav.sortie_open = False
        assert env.assign_uavs_to_ugvs(state) == {0: [0], 1: []}

    def test_single_ugv_gets_all(self):
        sc = make_line_scenario(
            [(500.0, 0.0)], ground_road_nodes=(1, 2), team=TeamConfig(2, 1)
        )
        env = MissionEnv(sc)
        state = env.reset()
        for uav, node, t in zip(state.uavs, (1, 2), (20.0, 10.0)):
            uav.landed_node = node
            uav.landed_at_s = t
            uav.sortie_open = False
        # landing-time order: uav1 landed first
        assert env.assign_uavs_to_ugvs(state) == {0: [1, 0]}


class TestTerminalAndReturn:
    def test_fresh_reset_running(self, u15g5):
        env = MissionEnv(u15g5)
        assert env.is_terminal(env.reset()) == RUNNING

    def test_all_visited_airborne_uav_still_running(self):
        sc = make_line_scenario([(500.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        state.visited[:] = True
        assert env.is_terminal(state) == RUNNING  # sortie still open

    def test_success_and_return_max_clock(self):
        sc = make_line_scenario([(500.0, 0.0)], ground_road_nodes=(1,))
        env, state, steps = random_episode(sc, seed=1, horizon=200)
        assert env.is_terminal(state) == SUCCESS
        ret = env.compute_return(state)
        assert ret == pytest.approx(max(a.clock_s for a in state.agents))

    def test_failure_penalty_800_minutes(self):
        sc = make_line_scenario([(500.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc)
        state = env.reset()
        for a, clock in zip(state.agents, (230.0 * 60, 190.0 * 60)):
            a.clock_s = clock
        state.failed = True
        assert env.compute_return(state) == pytest.approx(230.0 * 60 + 800.0 * 60)
        assert FAILURE_PENALTY_S == 48000.0

    def test_return_requires_terminal(self, u15g5):
        env = MissionEnv(u15g5)
        with pytest.raises(ContractViolationError):
            env.compute_return(env.reset())

    def test_horizon_failure(self):
        sc = make_line_scenario([(500.0, 0.0)], ground_road_nodes=(1,))
        env = MissionEnv(sc, horizon=1)
        state = env.reset()
        env.select_active_agent(state)
        env.step(state, Action(VISIT, 0))
        out = env.step(state, Action(RECHARGE, 1))
        assert out.terminal
        assert env.is_terminal(state) == FAILURE


class TestEpisodeProperties:
    @pytest.mark.parametrize("team", [(1, 1), (2, 1), (2, 2)])
    def test_random_rollouts_safe(self, team):
        n_uav, n_ugv = team
        for seed in range(25):
            sc = generate_scenario(
                6, 3, "uniform", TeamConfig(n_uav, n_ugv), seed=seed
            )
            env = MissionEnv(sc)
            state = env.reset()
            rng = np.random.default_rng(seed)
            visits = 0
            clocks = {(a.kind, a.id): 0.0 for a in state.agents}
            services = {g.id: [] for g in state.ugvs}
            while env.is_terminal(state) == RUNNING:
                env.select_active_agent(state)
                agent = state.agent(state.active_agent)
                idxs = np.flatnonzero(env.feasible_actions(state))
                if idxs.size == 0:
                    env.mark_failed(state)
                    break
                action = env.action_from_index(state, int(rng.choice(idxs)))
                before = state.visited.copy()
                env.step(state, action)
                for uav in state.uavs:
                    assert uav.fuel_kj >= -1e-9
                key = (agent.kind, agent.id)
                assert agent.clock_s >= clocks[key] - 1e-12
                clocks[key] = agent.clock_s
                flipped = int(state.visited.sum() - before.sum())
                if agent.kind == "uav" and action.kind == VISIT:
                    visits += 1
                    assert flipped == 1
                else:
                    assert flipped == 0
                if agent.kind == "ugv":
                    end = agent.clock_s
                    services[agent.id].append((end - sc.team.recharge_time_s, end))
            assert visits == int(state.visited.sum())
            for intervals in services.values():
                for (s1, e1), (s2, e2) in zip(intervals, intervals[1:]):
                    assert s2 >= e1 - 1e-9

    def test_replay_reproduces_episode(self):
        sc = make_line_scenario(
            [(500.0, 0.0), (900.0, 300.0)], ground_road_nodes=(1,)
        )
        env, state, steps = random_episode(sc, seed=9)
        actions = [(a.kind, a.node) for _, _, a, _, _ in steps]
        records, replayed, renv = replay_actions(sc, sc.team, actions)
        assert renv.is_terminal(replayed) == env.is_terminal(state)
        if renv.is_terminal(replayed) == SUCCESS:
            assert renv.compute_return(replayed) == pytest.approx(
                env.compute_return(state), abs=1e-9
            )

    def test_replay_rejects_illegal(self):
        sc = make_line_scenario([(500.0, 0.0)], ground_road_nodes=(1,))
        with pytest.raises(ContractViolationError):
            replay_actions(sc, sc.team, [(VISIT, 0), (VISIT, 0)])
