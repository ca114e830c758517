"""Reverse-mode autodiff over numpy, with seeded random streams and layers."""

from .layers import GRUParams, gru_cell, init_gru, init_linear, init_mlp, linear, mlp, run_gru
from .params import ParameterStore
from .rng import RngStream, purpose_tag
from .tensor import Tensor, as_tensor, default_dtype, forward_backward, get_default_dtype

__all__ = [
    "GRUParams",
    "ParameterStore",
    "RngStream",
    "Tensor",
    "as_tensor",
    "default_dtype",
    "forward_backward",
    "get_default_dtype",
    "gru_cell",
    "init_gru",
    "init_linear",
    "init_mlp",
    "linear",
    "mlp",
    "purpose_tag",
    "run_gru",
]
