from . import autograd
from .autograd import Tensor, grl
from .checkpoint import Checkpoint, CheckpointError
from .gradcheck import GradCheckReport, grad_check
from .layers import AttentivePool, ModelConfig, ModelGraph, attentive_pool
from .optim import SGD, Adam

__all__ = [
    "Adam",
    "AttentivePool",
    "Checkpoint",
    "CheckpointError",
    "GradCheckReport",
    "ModelConfig",
    "ModelGraph",
    "SGD",
    "Tensor",
    "attentive_pool",
    "autograd",
    "grad_check",
    "grl",
]
