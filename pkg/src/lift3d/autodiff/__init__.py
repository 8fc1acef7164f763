from . import tensor as ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn import Mlp, MlpConfig, ParameterStore, backward
from .optim import AdamState, adam_step
from .tensor import ShapeError, Tensor, gradients, no_grad

__all__ = [
    "AdamState",
    "CheckpointError",
    "Mlp",
    "MlpConfig",
    "ParameterStore",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "gradients",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
]
