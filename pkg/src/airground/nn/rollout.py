"""Policy rollouts: greedy and sampling decoding over the mission environment.

A rollout encodes the instance once, then decodes one action per environment
step until the mission terminates.  Infeasible missions surface as failed
trajectories with the penalized return, never as exceptions.  With
``want_grad`` the summed action log-probability is kept as a differentiable
tensor for policy-gradient training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..mdp import (
    RUNNING,
    UAV,
    Action,
    MissionEnv,
    MissionState,
    step_record,
)
from ..rng import make_rng
from ..scenario import Scenario, TeamConfig
from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .model import (
    PolicyParams,
    decode_step_uav,
    decode_step_ugv,
    encoder_forward,
    encoder_inputs,
)

GREEDY = "greedy"
SAMPLE = "sample"


@dataclass(frozen=True)
class DecodePolicy:
    strategy: str = GREEDY
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in (GREEDY, SAMPLE):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class Trajectory:
    actions: List[Tuple[str, int]]
    records: List[Dict[str, object]]
    return_s: float
    failed: bool
    log_prob: float
    log_prob_tensor: Optional[Tensor] = None
    state: Optional[MissionState] = None

    @property
    def return_min(self) -> float:
        return self.return_s / 60.0


def _visited_vector(state: MissionState) -> np.ndarray:
    # depot is the extra node and counts as permanently visited
    return np.concatenate([state.visited.astype(float), [1.0]])


def _decode_distribution(env: MissionEnv, state: MissionState, enc, params, mask):
    agent = state.agent(state.active_agent)
    if agent.kind == UAV:
        fuel_frac = agent.fuel_kj / state.scenario.fuel.capacity_kj
        return decode_step_uav(enc, _visited_vector(state), agent.node, fuel_frac, params, mask)
    queue = state.pending.get(agent.id, [])
    uavs = state.uavs
    nodes = [uavs[uid].landed_node for uid in queue]
    times = [uavs[uid].landed_at_s for uid in queue]
    return decode_step_ugv(enc, nodes, times, agent.clock_s, params, mask)


def rollout_once(
    scenario: Scenario,
    team: Optional[TeamConfig],
    params: PolicyParams,
    mode: str = GREEDY,
    rng: Optional[np.random.Generator] = None,
    selection: str = "sortie",
    want_grad: bool = False,
    horizon: Optional[int] = None,
    start_state: Optional[MissionState] = None,
    env: Optional[MissionEnv] = None,
) -> Trajectory:
    """One decoded trajectory; deterministic under ``greedy`` or a fixed rng."""
    if mode == SAMPLE and rng is None:
        raise ValueError("sampling mode needs an rng")
    env = env or MissionEnv(scenario, team, selection=selection, horizon=horizon)
    state = start_state if start_state is not None else env.reset()
    ctx = _NullContext() if want_grad else no_grad()
    actions: List[Tuple[str, int]] = []
    records: List[Dict[str, object]] = []
    logp_terms: List[Tensor] = []
    logp_value = 0.0
    with ctx:
        enc = encoder_forward(encoder_inputs(scenario), params)
        t = state.step_count
        while env.is_terminal(state) == RUNNING:
            env.select_active_agent(state)
            agent = state.agent(state.active_agent)
            mask = env.feasible_actions(state)
            if not mask.any():
                env.mark_failed(state)
                break
            probs, _ = _decode_distribution(env, state, enc, params, mask)
            p = probs.data.ravel()
            if mode == GREEDY:
                idx = int(np.argmax(p))
            else:
                idx = int(rng.choice(p.size, p=p / p.sum()))
            if want_grad:
                logp_terms.append(ad.log(ad.narrow(probs, 1, idx, 1)))
            logp_value += math.log(p[idx])
            action = env.action_from_index(state, idx)
            outcome = env.step(state, action)
            actions.append((action.kind, action.node))
            records.append(step_record(t, agent, action, outcome.reward_s))
            t += 1
    logp_tensor = None
    if want_grad and logp_terms:
        total = logp_terms[0]
        for term in logp_terms[1:]:
            total = ad.add(total, term)
        logp_tensor = total
    return Trajectory(
        actions=actions,
        records=records,
        return_s=env.compute_return(state),
        failed=env.is_terminal(state) == "failure",
        log_prob=logp_value,
        log_prob_tensor=logp_tensor,
        state=state,
    )


def rollout(
    scenario: Scenario,
    team: Optional[TeamConfig],
    params: PolicyParams,
    policy: DecodePolicy,
    selection: str = "sortie",
    horizon: Optional[int] = None,
    start_state: Optional[MissionState] = None,
) -> Tuple[Trajectory, List[Trajectory]]:
    """Decode per ``policy``: the best trajectory plus the whole pool.

    Greedy returns a single deterministic trajectory.  Sampling draws
    ``n_samples`` independently seeded trajectories and reports the one with
    the lowest return; the full pool is retained for training or audits.
    """
    if policy.strategy == GREEDY:
        base = None if start_state is None else start_state.clone()
        traj = rollout_once(
            scenario, team, params, GREEDY,
            selection=selection, horizon=horizon, start_state=base,
        )
        return traj, [traj]
    pool = []
    for i in range(policy.n_samples):
        base = None if start_state is None else start_state.clone()
        pool.append(
            rollout_once(
                scenario,
                team,
                params,
                SAMPLE,
                rng=make_rng(policy.seed, i),
                selection=selection,
                horizon=horizon,
                start_state=base,
            )
        )
    best = min(pool, key=lambda tr: tr.return_s)
    return best, pool


class _NullContext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False
