from .autodiff import AutogradError, Parameter, Tensor, backward, no_grad
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .policy import PolicyConfig, PolicyNetwork, RecurrentState, policy_forward, softmax

__all__ = [
    "AutogradError", "CheckpointError", "Parameter", "PolicyConfig", "PolicyNetwork", "RecurrentState",
    "Tensor", "backward", "load_checkpoint", "no_grad", "policy_forward", "save_checkpoint", "softmax",
]
