"""Reverse-mode differentiation, small MLPs, Adam and gradient checking."""

from . import tensor as ops
from .gradcheck import gradcheck, sample_indices
from .nn import MLPSpec, init_mlp, kaiming_uniform, mlp, mlp_backward, mlp_forward, name_rng
from .optim import ParamStore, adam_step
from .tensor import Tensor, no_grad, note_branch, record_branches

__all__ = [
    "MLPSpec", "ParamStore", "Tensor", "adam_step", "gradcheck", "init_mlp", "kaiming_uniform",
    "mlp", "mlp_backward", "mlp_forward", "name_rng", "no_grad", "note_branch", "ops", "record_branches",
    "sample_indices",
]
