"""Finite-difference validation of the reverse-mode gradients.

Builds a tiny network and a fixed trajectory on a small instance, takes the
summed action log-probability as the scalar loss, and compares analytic
gradients against central finite differences coordinate by coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..mdp import RUNNING, Action, MissionEnv
from ..rng import derive_seed, make_rng
from ..scenario import Scenario, TeamConfig, generate_scenario
from . import autodiff as ad
from .autodiff import no_grad
from .model import PolicyConfig, PolicyParams, encoder_forward, encoder_inputs
from .rollout import SAMPLE, _decode_distribution, rollout_once


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    n_coords: int

    def __repr__(self):
        return (
            f"GradCheckResult(max_rel_err={self.max_rel_err:.3e}, "
            f"worst_param={self.worst_param!r}, n_coords={self.n_coords})"
        )


def _teacher_forced_logp(scenario, team, params, actions, want_grad):
    """Σ log π over a fixed action sequence (the gradient-check loss)."""
    env = MissionEnv(scenario, team)
    state = env.reset()
    ctx = ad.no_grad() if not want_grad else _noop()
    with ctx:
        enc = encoder_forward(encoder_inputs(scenario), params)
        total = None
        value = 0.0
        for kind, node in actions:
            env.select_active_agent(state)
            mask = env.feasible_actions(state)
            probs, _ = _decode_distribution(env, state, enc, params, mask)
            idx = env.action_index(state, Action(kind, node))
            term = ad.log(ad.narrow(probs, 1, idx, 1))
            value += term.data.item()
            total = term if total is None else ad.add(total, term)
            env.step(state, Action(kind, node))
    return total, value


class _noop:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def gradcheck_fixture(seed: int) -> Tuple[Scenario, TeamConfig, PolicyParams, List[Tuple[str, int]]]:
    """Tiny network (5 nodes, d_h=8, 2 heads, 1 layer) and a fixed trajectory.

    Two UAVs and two ground points make both decoders carry gradient: the
    ground phase only propagates when the UGV has a real choice between
    landing nodes, which sampled rollouts on this instance regularly produce.
    """
    team = TeamConfig(num_uavs=2, num_ugvs=1)
    scenario = generate_scenario(2, 2, "uniform", team, seed=derive_seed(seed, 101))
    params = PolicyParams.init(PolicyConfig.tiny(), seed=derive_seed(seed, 202))
    traj = rollout_once(
        scenario, team, params, SAMPLE, rng=make_rng(seed, 303), want_grad=False
    )
    return scenario, team, params, traj.actions


#: Coordinates whose gradients sit below this scale are compared absolutely
#: at the floor scale: central differences at h=1e-6 carry ~1e-9 of rounding
#: noise in 64-bit, which would dominate a pure ratio on near-zero gradients.
REL_ERR_FLOOR = 1e-4


def gradient_check(
    seed: int,
    fd_step: float = 1e-6,
    max_coords_per_tensor: Optional[int] = 8,
    tol: float = 1e-4,
    raise_on_fail: bool = False,
) -> GradCheckResult:
    """Compare analytic and central-difference gradients on the tiny fixture.

    Checks every parameter tensor; within a tensor, coordinates are an
    evenly-spaced deterministic subsample of at most ``max_coords_per_tensor``
    (``None`` checks all).  Error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, REL_ERR_FLOOR).
    """
    scenario, team, params, actions = gradcheck_fixture(seed)
    loss, _ = _teacher_forced_logp(scenario, team, params, actions, want_grad=True)
    params.zero_grad()
    loss.backward()

    worst = 0.0
    worst_name = ""
    n_checked = 0
    for name in params.names():
        t = params[name]
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        size = flat.size
        if max_coords_per_tensor is None or size <= max_coords_per_tensor:
            coords = range(size)
        else:
            coords = np.linspace(0, size - 1, max_coords_per_tensor).astype(int)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + fd_step
            _, up = _teacher_forced_logp(scenario, team, params, actions, want_grad=False)
            flat[c] = orig - fd_step
            _, dn = _teacher_forced_logp(scenario, team, params, actions, want_grad=False)
            flat[c] = orig
            numeric = (up - dn) / (2 * fd_step)
            a = analytic.reshape(-1)[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_ERR_FLOOR)
            n_checked += 1
            if rel > worst:
                worst, worst_name = rel, f"{name}[{c}]"
    result = GradCheckResult(worst, worst_name, n_checked)
    if raise_on_fail and worst >= tol:
        raise AssertionError(f"gradient check failed: {result}")
    return result
