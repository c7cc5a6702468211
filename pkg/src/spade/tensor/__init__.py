from . import ops, optim
from .checkpoint import load_tensors, save_tensors
from .core import Tape, Tensor, as_tensor, backward, get_tape, grad_enabled, no_grad
from .gradcheck import GradCheckReport, finite_diff_check
from .nn import Module, Parameter, ParamInit

__all__ = [
    "GradCheckReport",
    "Module",
    "ParamInit",
    "Parameter",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "finite_diff_check",
    "get_tape",
    "grad_enabled",
    "load_tensors",
    "no_grad",
    "ops",
    "optim",
    "save_tensors",
]
