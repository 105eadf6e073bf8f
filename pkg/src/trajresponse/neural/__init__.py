"""Hand-rolled differentiable building blocks for the fixed model architecture.

Every forward operation here has an exact analytic backward pass; correctness
is checked against central finite differences (see :mod:`.gradcheck`).  There
is deliberately no generic autodiff: the architecture is fixed and small.
"""

from .layers import (
    GaussianParams,
    attention,
    attention_backward,
    embed,
    embed_backward,
    gaussian_head,
    gaussian_head_backward,
    lstm_step,
    lstm_step_backward,
)
from .losses import LossConfig, nll, nll_backward, sequence_loss
from .optim import AdamState, adam_step, clip_global_norm
from .params import ParameterSet, init_red_params, init_response_params
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check

__all__ = [
    "GaussianParams", "embed", "embed_backward", "lstm_step", "lstm_step_backward",
    "attention", "attention_backward", "gaussian_head", "gaussian_head_backward",
    "LossConfig", "nll", "nll_backward", "sequence_loss",
    "AdamState", "adam_step", "clip_global_norm",
    "ParameterSet", "init_response_params", "init_red_params",
    "save_checkpoint", "load_checkpoint", "grad_check",
]
