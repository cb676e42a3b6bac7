"""Minimal float64 neural-network kernel with reverse-mode gradients."""
from .autodiff import Var
from .gradcheck import GradientCheckError, grad_check
from .layers import GruParams, MlpParams, dropout_mask, gru_cell, mlp_forward, xavier_uniform
from .optim import AdamState, adam_step

__all__ = [
    "Var", "grad_check", "GradientCheckError", "GruParams", "MlpParams", "dropout_mask",
    "gru_cell", "mlp_forward", "xavier_uniform", "AdamState", "adam_step",
]
