"""Attention routing policy: encoder, UAV decoder and UGV decoder.

The encoder embeds every node (tasks plus depot) from its normalized
coordinates and a ground flag, then runs multi-head self-attention layers
with residual connections, per-node-set normalization and a feed-forward
block.  Node embeddings are computed once per instance; mission progress
enters through the decoder context vectors only.

The UAV decoder builds a context from the mean graph embedding (node
embeddings concatenated with visitation flags) plus the active UAV's
position embedding and fuel level, refines it with a multi-head glimpse over
the node embeddings, and scores actions with a clipped-tanh compatibility.
Visit and recharge variants of the same node are scored through separate key
projections, giving one logit per action rather than per node.

The UGV decoder embeds the landing times of its assigned UAVs and its own
clock, joins them with the landing-node embeddings, and cross-multiplies the
context rows against all node embeddings, mean-pooling over the context
dimension to get per-node scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractViolationError
from ..rng import make_rng
from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class PolicyConfig:
    d_h: int = 128
    n_heads: int = 8
    n_layers: int = 3
    c_p: float = 10.0
    d_ff: Optional[int] = None  # defaults to 4 * d_h
    t_norm_s: float = 480.0 * 60.0
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.d_h % self.n_heads:
            raise ValueError("d_h must be divisible by n_heads")

    @property
    def d_head(self) -> int:
        return self.d_h // self.n_heads

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_h

    @classmethod
    def paper_scale(cls) -> "PolicyConfig":
        return cls()

    @classmethod
    def desk_scale(cls) -> "PolicyConfig":
        return cls(d_h=32, n_heads=4, n_layers=2)

    @classmethod
    def tiny(cls) -> "PolicyConfig":
        return cls(d_h=8, n_heads=2, n_layers=1)


class PolicyParams:
    """Named weight tensors plus the architecture hyperparameters.

    Tensor iteration order is the fixed creation order, which pins the
    gradient-reduction and optimizer-update order for reproducibility.
    """

    def __init__(self, config: PolicyConfig, tensors: Dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: PolicyConfig, seed: int, dtype=np.float64) -> "PolicyParams":
        rng = make_rng(seed)
        tensors: Dict[str, Tensor] = {}

        def uniform(name, d_in, shape):
            bound = 1.0 / math.sqrt(d_in)
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
            tensors[name] = Tensor(data, requires_grad=True)

        def const(name, shape, value):
            tensors[name] = Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)

        d, dk, dff = config.d_h, config.d_head, config.ff_width
        uniform("embed.W", 3, (3, d))
        uniform("embed.b", 3, (1, d))
        for l in range(config.n_layers):
            for j in range(config.n_heads):
                uniform(f"enc{l}.head{j}.Wq", d, (d, dk))
                uniform(f"enc{l}.head{j}.Wk", d, (d, dk))
                uniform(f"enc{l}.head{j}.Wv", d, (d, dk))
            const(f"enc{l}.norm1.gamma", (1, d), 1.0)
            const(f"enc{l}.norm1.beta", (1, d), 0.0)
            uniform(f"enc{l}.ff.W1", d, (d, dff))
            uniform(f"enc{l}.ff.b1", d, (1, dff))
            uniform(f"enc{l}.ff.W2", dff, (dff, d))
            uniform(f"enc{l}.ff.b2", dff, (1, d))
            const(f"enc{l}.norm2.gamma", (1, d), 1.0)
            const(f"enc{l}.norm2.beta", (1, d), 0.0)
        uniform("uav.Wg", d + 1, (d + 1, d))
        uniform("uav.Wc", d + 1, (d + 1, d))
        uniform("uav.glimpse.Wq", d, (d, d))
        uniform("uav.glimpse.Wk", d, (d, d))
        uniform("uav.glimpse.Wv", d, (d, d))
        uniform("uav.out.Wq", d, (d, d))
        uniform("uav.out.Wk_visit", d, (d, d))
        uniform("uav.out.Wk_recharge", d, (d, d))
        uniform("ugv.Wlt", 1, (1, d))
        uniform("ugv.Wt", 1, (1, d))
        uniform("ugv.Wc", 2 * d, (2 * d, d))
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> List[str]:
        return list(self.tensors.keys())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def clone(self) -> "PolicyParams":
        return PolicyParams(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.tensors.items()},
        )

    def copy_from(self, other: "PolicyParams"):
        for k, t in self.tensors.items():
            np.copyto(t.data, other.tensors[k].data)

    def n_values(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def encoder_inputs(scenario) -> np.ndarray:
    """Per-node raw features: coordinates scaled to [0,1] and a ground flag."""
    coords = scenario.node_xy / scenario.area_side_m
    flags = scenario.node_is_ground.astype(float)[:, None]
    return np.concatenate([coords, flags], axis=1)


def encoder_forward(inputs: np.ndarray, params: PolicyParams) -> Tensor:
    """Node embeddings (n x d_h) after all attention layers."""
    if not np.all(np.isfinite(inputs)):
        raise ValueError("encoder inputs must be finite")
    cfg = params.config
    d, dk = cfg.d_h, cfg.d_head
    scale = 1.0 / math.sqrt(dk)
    h = ad.add(ad.matmul(Tensor(np.asarray(inputs, dtype=ad.DEFAULT_DTYPE)), params["embed.W"]), params["embed.b"])
    for l in range(cfg.n_layers):
        heads = []
        for j in range(cfg.n_heads):
            q = ad.matmul(h, params[f"enc{l}.head{j}.Wq"])
            k = ad.matmul(h, params[f"enc{l}.head{j}.Wk"])
            v = ad.matmul(h, params[f"enc{l}.head{j}.Wv"])
            att = ad.softmax_rows(ad.mul_scalar(ad.matmul(q, k.T), scale))
            heads.append(ad.matmul(att, v))
        mha = ad.concat(heads, axis=1)
        h1 = ad.add(
            ad.mul(
                ad.standardize_columns(ad.add(h, mha)),
                params[f"enc{l}.norm1.gamma"],
            ),
            params[f"enc{l}.norm1.beta"],
        )
        ff = ad.add(
            ad.matmul(
                ad.relu(ad.add(ad.matmul(h1, params[f"enc{l}.ff.W1"]), params[f"enc{l}.ff.b1"])),
                params[f"enc{l}.ff.W2"],
            ),
            params[f"enc{l}.ff.b2"],
        )
        h = ad.add(
            ad.mul(
                ad.standardize_columns(ad.add(h1, ff)),
                params[f"enc{l}.norm2.gamma"],
            ),
            params[f"enc{l}.norm2.beta"],
        )
    return h


def decode_step_uav(
    enc: Tensor,
    visited: np.ndarray,
    current_node: int,
    fuel_frac: float,
    params: PolicyParams,
    mask: np.ndarray,
) -> Tuple[Tensor, Tensor]:
    """Action distribution for the active UAV.

    ``visited`` holds one flag per node (depot always 1); ``mask`` covers the
    2n-long action space (visit each node, recharge at each node).  Returns
    ``(probs, logits)`` where ``logits`` are pre-mask and clipped to ±c_p.
    """
    cfg = params.config
    n = enc.data.shape[0]
    if not mask.any():
        raise ValueError("all actions masked")
    d_col = Tensor(np.asarray(visited, dtype=enc.data.dtype).reshape(n, 1))
    graph = ad.mean(ad.matmul(ad.concat([enc, d_col], axis=1), params["uav.Wg"]), axis=0, keepdims=True)
    cur = ad.take_rows(enc, [current_node])
    state_vec = ad.concat([cur, Tensor(np.array([[fuel_frac]], dtype=enc.data.dtype))], axis=1)
    ctx = ad.add(graph, ad.matmul(state_vec, params["uav.Wc"]))

    dk = cfg.d_head
    scale = 1.0 / math.sqrt(dk)
    q = ad.matmul(ctx, params["uav.glimpse.Wq"])
    k = ad.matmul(enc, params["uav.glimpse.Wk"])
    v = ad.matmul(enc, params["uav.glimpse.Wv"])
    heads = []
    for j in range(cfg.n_heads):
        qj = ad.narrow(q, 1, j * dk, dk)
        kj = ad.narrow(k, 1, j * dk, dk)
        vj = ad.narrow(v, 1, j * dk, dk)
        att = ad.softmax_rows(ad.mul_scalar(ad.matmul(qj, kj.T), scale))
        heads.append(ad.matmul(att, vj))
    glimpse = ad.concat(heads, axis=1)

    qf = ad.matmul(glimpse, params["uav.out.Wq"])
    kv = ad.matmul(enc, params["uav.out.Wk_visit"])
    kr = ad.matmul(enc, params["uav.out.Wk_recharge"])
    att_scale = 1.0 / math.sqrt(cfg.d_h)
    logit_visit = ad.mul_scalar(ad.tanh(ad.mul_scalar(ad.matmul(qf, kv.T), att_scale)), cfg.c_p)
    logit_rech = ad.mul_scalar(ad.tanh(ad.mul_scalar(ad.matmul(qf, kr.T), att_scale)), cfg.c_p)
    logits = ad.concat([logit_visit, logit_rech], axis=1)
    probs = ad.masked_softmax(logits, np.asarray(mask, dtype=bool).reshape(1, -1))
    return probs, logits


def decode_step_ugv(
    enc: Tensor,
    landing_nodes: Sequence[int],
    landing_times_s: Sequence[float],
    ugv_clock_s: float,
    params: PolicyParams,
    mask: np.ndarray,
) -> Tuple[Tensor, Tensor]:
    """Action distribution over landing nodes for the active UGV.

    Raises :class:`ContractViolationError` when the UGV has no assigned
    landed UAV; otherwise the distribution is supported exactly on the
    masked-in landing nodes.  Returns ``(probs, logits)``.
    """
    cfg = params.config
    if len(landing_nodes) == 0:
        raise ContractViolationError("UGV decode requires at least one landed UAV")
    dtype = enc.data.dtype
    lt = Tensor(np.asarray(landing_times_s, dtype=dtype).reshape(-1, 1) / cfg.t_norm_s)
    h_lt = ad.leaky_relu(ad.matmul(lt, params["ugv.Wlt"]), cfg.leaky_slope)
    t_ugv = Tensor(np.array([[ugv_clock_s / cfg.t_norm_s]], dtype=dtype))
    h_t = ad.relu(ad.matmul(t_ugv, params["ugv.Wt"]))
    h_time = ad.add(h_lt, h_t)
    h_loc = ad.take_rows(enc, list(landing_nodes))
    ctx = ad.relu(ad.matmul(ad.concat([h_loc, h_time], axis=1), params["ugv.Wc"]))
    cross = ad.matmul(enc, ctx.T)
    pooled = ad.mean(cross, axis=1, keepdims=True)
    logits = ad.mul_scalar(ad.tanh(ad.mul_scalar(pooled.T, 1.0 / math.sqrt(cfg.d_h))), cfg.c_p)
    probs = ad.masked_softmax(logits, np.asarray(mask, dtype=bool).reshape(1, -1))
    return probs, logits
