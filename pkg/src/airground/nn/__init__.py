from .autodiff import Tensor, no_grad, tensor
from .model import PolicyConfig, PolicyParams, decode_step_uav, decode_step_ugv, encoder_forward
from .rollout import DecodePolicy, Trajectory, rollout

__all__ = [
    "Tensor",
    "no_grad",
    "tensor",
    "PolicyConfig",
    "PolicyParams",
    "encoder_forward",
    "decode_step_uav",
    "decode_step_ugv",
    "DecodePolicy",
    "Trajectory",
    "rollout",
]
