"""Policy-gradient training with a greedy-rollout baseline.

Each batch draws fresh instances, rolls the policy out with sampling and the
frozen baseline network greedily on the same instances, and takes one
adaptive-moment step on the advantage-weighted log-probability loss
(minimization sign: trajectories worse than the baseline get their
probability pushed down).  The learning rate decays geometrically per epoch;
at every epoch end a one-sided paired t-test decides whether the baseline
network adopts the policy weights.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import betainc

from .errors import ContractViolationError
from .nn.autodiff import Tensor
from .nn import autodiff as ad
from .nn.model import PolicyConfig, PolicyParams
from .nn.rollout import GREEDY, SAMPLE, rollout_once
from .rng import derive_seed, make_rng
from .scenario import TeamConfig, generate_scenario

#: Returns are normalized to hours inside the optimizer so advantages stay O(1).
SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class ProblemSpec:
    n_aerial: int
    n_ground: int
    distribution: str
    team: TeamConfig


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batches_per_epoch: int = 200
    batch_size: int = 256
    lr0: float = 1e-4
    decay_alpha: float = 0.995
    significance: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    problem: ProblemSpec = field(
        default_factory=lambda: ProblemSpec(15, 5, "uniform", TeamConfig(1, 1))
    )
    policy: PolicyConfig = field(default_factory=PolicyConfig.paper_scale)
    selection: str = "sortie"

    def __post_init__(self):
        if not (0 < self.decay_alpha <= 1):
            raise ValueError("decay_alpha must be in (0, 1]")

    @classmethod
    def desk_profile(cls, **overrides) -> "TrainConfig":
        """Laptop-scale profile: small instances, small net, short schedule."""
        base = dict(
            epochs=10,
            batches_per_epoch=20,
            batch_size=32,
            lr0=1e-3,
            problem=ProblemSpec(8, 3, "uniform", TeamConfig(1, 1)),
            policy=PolicyConfig.desk_scale(),
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: PolicyParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.tensors.items()},
            v={k: np.zeros_like(p.data) for k, p in params.tensors.items()},
        )


def adam_step(params: PolicyParams, opt: AdamState, lr: float, cfg: TrainConfig):
    """One bias-corrected adaptive-moment update over all parameter tensors."""
    opt.t += 1
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.adam_eps
    bc1 = 1.0 - b1**opt.t
    bc2 = 1.0 - b2**opt.t
    for name in params.names():
        p = params[name]
        g = p.grad
        if g is None:
            continue
        m = opt.m[name]
        v = opt.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def lr_at_epoch(lr0: float, alpha: float, n_epoch: int) -> float:
    """Geometric decay: the rate in force after ``n_epoch`` completed epochs."""
    if n_epoch < 0:
        raise ValueError("n_epoch must be >= 0")
    return lr0 * alpha**n_epoch


def paired_t_test(policy_returns: Sequence[float], baseline_returns: Sequence[float]) -> float:
    """One-sided paired t-test p-value for "policy beats baseline".

    Differences are baseline minus policy, so lower policy returns push the
    statistic positive and the p-value small.  The t survival function is
    evaluated through the regularized incomplete beta function, exact for
    small samples.  Degenerate zero-variance differences give p=0 when the
    policy is strictly better on average and p=1 otherwise.
    """
    if len(policy_returns) != len(baseline_returns):
        raise ContractViolationError("paired samples must have equal length")
    n = len(policy_returns)
    if n < 2:
        raise ContractViolationError("paired t-test needs at least 2 pairs")
    d = np.asarray(baseline_returns, dtype=float) - np.asarray(policy_returns, dtype=float)
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        return 1.0 if mean <= 0 else 0.0
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return float(tail if t >= 0 else 1.0 - tail)


@dataclass
class TrainState:
    policy: PolicyParams
    baseline: PolicyParams
    optimizer: AdamState
    epoch: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)
    epoch_stats: List[Dict[str, float]] = field(default_factory=list)


class TrainingDivergedError(Exception):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


def make_instance(problem: ProblemSpec, seed: int):
    return generate_scenario(
        problem.n_aerial, problem.n_ground, problem.distribution, problem.team, seed=seed
    )


def train(
    config: TrainConfig,
    seed: int,
    initial_params: Optional[PolicyParams] = None,
    on_epoch: Optional[Callable[[TrainState], None]] = None,
    on_batch: Optional[Callable[[Dict[str, float]], None]] = None,
) -> TrainState:
    """Full training loop; bit-reproducible for a fixed seed in 64-bit mode."""
    theta = initial_params.clone() if initial_params else PolicyParams.init(config.policy, derive_seed(seed, 0))
    phi = theta.clone()
    state = TrainState(policy=theta, baseline=phi, optimizer=AdamState.for_params(theta))

    for epoch in range(config.epochs):
        lr = lr_at_epoch(config.lr0, config.decay_alpha, epoch)
        epoch_policy: List[float] = []
        epoch_baseline: List[float] = []
        for batch in range(config.batches_per_epoch):
            t0 = time.perf_counter()
            loss_terms = []
            returns = []
            failures = 0
            for i in range(config.batch_size):
                inst_seed = derive_seed(seed, 1, epoch, batch, i)
                scenario = make_instance(config.problem, inst_seed)
                sampled = rollout_once(
                    scenario,
                    config.problem.team,
                    theta,
                    SAMPLE,
                    rng=make_rng(seed, 2, epoch, batch, i),
                    selection=config.selection,
                    want_grad=True,
                )
                greedy = rollout_once(
                    scenario, config.problem.team, phi, GREEDY, selection=config.selection
                )
                adv = (sampled.return_s - greedy.return_s) / SECONDS_PER_HOUR
                if sampled.log_prob_tensor is not None:
                    loss_terms.append(ad.mul_scalar(sampled.log_prob_tensor, adv / config.batch_size))
                returns.append(sampled.return_s)
                failures += int(sampled.failed)
                epoch_policy.append(sampled.return_s)
                epoch_baseline.append(greedy.return_s)
            loss = loss_terms[0]
            for term in loss_terms[1:]:
                loss = ad.add(loss, term)
            if not np.isfinite(loss.data).all():
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {batch}",
                    snapshot={"epoch": epoch, "batch": batch, "returns": returns},
                )
            theta.zero_grad()
            loss.backward()
            for name in theta.names():
                g = theta[name].grad
                if g is not None and not np.isfinite(g).all():
                    raise TrainingDivergedError(
                        f"non-finite gradient in {name} at epoch {epoch} batch {batch}",
                        snapshot={"epoch": epoch, "batch": batch},
                    )
            adam_step(theta, state.optimizer, lr, config)
            row = {
                "epoch": epoch,
                "batch": batch,
                "mean_return_min": float(np.mean(returns)) / 60.0,
                "failure_rate": failures / config.batch_size,
                "lr": lr,
                "p_value": math.nan,
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            }
            state.history.append(row)
            if on_batch:
                on_batch(row)
        p_value = paired_t_test(epoch_policy, epoch_baseline)
        swapped = p_value < config.significance
        if swapped:
            phi.copy_from(theta)
        state.history[-1]["p_value"] = p_value
        state.epoch_stats.append(
            {
                "epoch": epoch,
                "p_value": p_value,
                "swapped": float(swapped),
                "mean_return_min": float(np.mean(epoch_policy)) / 60.0,
            }
        )
        state.epoch = epoch + 1
        if on_epoch:
            on_epoch(state)
    return state


def evaluate_greedy_mean(
    params: PolicyParams,
    problem: ProblemSpec,
    seeds: Sequence[int],
    selection: str = "sortie",
) -> float:
    """Mean greedy-decode return (seconds) over a fixed held-out seed list."""
    totals = []
    for s in seeds:
        scenario = make_instance(problem, s)
        traj = rollout_once(scenario, problem.team, params, GREEDY, selection=selection)
        totals.append(traj.return_s)
    return float(np.mean(totals))
