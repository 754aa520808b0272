"""Minimal reverse-mode autodiff over numpy arrays, plus layers and Adam."""
from . import functional
from .functional import (
    conv1d,
    dropout,
    gaussian_nll_loss,
    gelu,
    kl_diag_gaussian,
    layer_norm,
    linear,
    max_pool1d,
    mse_loss,
    relu,
    scaled_dot_attention,
    sigmoid,
    softmax,
    softplus,
)
from .gradcheck import grad_check, grad_check_params
from .layers import (
    Conv1d,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    VariationalConv1d,
    VariationalLinear,
    multi_head_attention,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, concat, no_grad, set_debug

__all__ = [
    "Adam", "AdamState", "Conv1d", "LayerNorm", "Linear", "Module", "MultiHeadAttention",
    "Parameter", "Tensor", "VariationalConv1d", "VariationalLinear", "adam_step", "concat",
    "conv1d", "dropout", "functional", "gaussian_nll_loss", "gelu", "grad_check",
    "grad_check_params", "kl_diag_gaussian", "layer_norm", "linear", "max_pool1d",
    "mse_loss", "multi_head_attention", "no_grad", "relu", "scaled_dot_attention",
    "set_debug", "sigmoid", "softmax", "softplus",
]
