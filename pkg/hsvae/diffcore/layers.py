"""Dense, MLP and GRU building blocks over a ParameterStore."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError
from . import tensor as T
from .params import ParameterStore
from .rng import RngStream
from .tensor import Tensor

logger = logging.getLogger(__name__)


def _uniform(rng: RngStream, shape: Tuple[int, ...], bound: float) -> np.ndarray:
    return (2.0 * rng.uniform(shape) - 1.0) * bound


def init_linear(store: ParameterStore, name: str, fan_in: int, fan_out: int,
                rng: RngStream, scale: Optional[float] = None) -> None:
    """Weight U(-b, b) with b = scale or 1/sqrt(fan_in); zero bias."""
    bound = scale if scale is not None else 1.0 / np.sqrt(fan_in)
    store.add(f"{name}.weight", _uniform(rng, (fan_in, fan_out), bound))
    store.add(f"{name}.bias", np.zeros(fan_out))


def linear(store: ParameterStore, name: str, x: Tensor) -> Tensor:
    weight = store[f"{name}.weight"]
    if x.shape[-1] != weight.shape[0]:
        raise ContractError(f"{name}: input width {x.shape[-1]} does not match {weight.shape[0]}")
    return T.matmul(x, weight) + store[f"{name}.bias"]


def init_mlp(store: ParameterStore, name: str, sizes: Sequence[int], rng: RngStream) -> None:
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{name}.{i}", fan_in, fan_out, rng)


def mlp(store: ParameterStore, name: str, x: Tensor, depth: int,
        activation: Callable[[Tensor], Tensor] = T.tanh) -> Tensor:
    """`depth` linear layers; activation between them, none after the last."""
    for i in range(depth):
        x = linear(store, f"{name}.{i}", x)
        if i < depth - 1:
            x = activation(x)
    return x


@dataclass
class GRUParams:
    """
    Gate weights stacked in (reset, update, candidate) order.

    w_x: (E, 3H), w_h: (H, 3H), b_x: (3H,), b_h: (3H,)
    """

    w_x: Tensor
    w_h: Tensor
    b_x: Tensor
    b_h: Tensor

    def __post_init__(self):
        hidden = self.w_h.shape[0]
        if self.w_h.shape != (hidden, 3 * hidden):
            raise ContractError(f"GRU w_h must be (H, 3H), got {self.w_h.shape}")
        if self.w_x.ndim != 2 or self.w_x.shape[1] != 3 * hidden:
            raise ContractError(f"GRU w_x must be (E, {3 * hidden}), got {self.w_x.shape}")
        if self.b_x.shape != (3 * hidden,) or self.b_h.shape != (3 * hidden,):
            raise ContractError("GRU biases must have shape (3H,)")

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    @classmethod
    def from_store(cls, store: ParameterStore, name: str) -> "GRUParams":
        return cls(store[f"{name}.w_x"], store[f"{name}.w_h"], store[f"{name}.b_x"], store[f"{name}.b_h"])


def init_gru(store: ParameterStore, name: str, input_dim: int, hidden_dim: int, rng: RngStream) -> None:
    bound = 1.0 / np.sqrt(hidden_dim)
    store.add(f"{name}.w_x", _uniform(rng, (input_dim, 3 * hidden_dim), bound))
    store.add(f"{name}.w_h", _uniform(rng, (hidden_dim, 3 * hidden_dim), bound))
    store.add(f"{name}.b_x", np.zeros(3 * hidden_dim))
    store.add(f"{name}.b_h", np.zeros(3 * hidden_dim))


def gru_cell(x_t: Tensor, h_prev: Tensor, params: GRUParams) -> Tensor:
    """
    One GRU step.

        r  = sigmoid(W_xr x + b_xr + W_hr h + b_hr)
        u  = sigmoid(W_xu x + b_xu + W_hu h + b_hu)
        n  = tanh(W_xn x + b_xn + r * (W_hn h + b_hn))
        h' = (1 - u) * n + u * h

    Works on a single vector (E,) / (H,) or a batch (B, E) / (B, H).
    """
    x_t, h_prev = T.as_tensor(x_t), T.as_tensor(h_prev)
    hidden = params.hidden_dim
    if x_t.shape[-1] != params.input_dim:
        raise ContractError(f"GRU input width {x_t.shape[-1]} does not match {params.input_dim}")
    if h_prev.shape[-1] != hidden or h_prev.ndim != x_t.ndim:
        raise ContractError(f"GRU state shape {h_prev.shape} does not match input {x_t.shape} / H={hidden}")

    gx = T.matmul(x_t, params.w_x) + params.b_x
    gh = T.matmul(h_prev, params.w_h) + params.b_h
    r = T.sigmoid(gx[..., :hidden] + gh[..., :hidden])
    u = T.sigmoid(gx[..., hidden:2 * hidden] + gh[..., hidden:2 * hidden])
    n = T.tanh(gx[..., 2 * hidden:] + r * gh[..., 2 * hidden:])
    return n + u * (h_prev - n)


def run_gru(steps: Sequence[Tensor], params: GRUParams, mask: Optional[np.ndarray] = None,
            h0: Optional[Tensor] = None) -> Tuple[Tensor, List[Tensor]]:
    """
    Unroll a GRU over per-step inputs of shape (B, E).

    Where mask[:, t] is 0 the state is carried through unchanged, so the
    final state of a padded sentence is its state at its last real token.

    Returns:
        (final state (B, H), list of per-step states)
    """
    if not steps:
        raise ContractError("run_gru needs at least one step")
    batch = steps[0].shape[0]
    h = h0 if h0 is not None else Tensor(np.zeros((batch, params.hidden_dim)), dtype=params.w_h.dtype)
    if mask is not None and mask.shape != (batch, len(steps)):
        raise ContractError(f"mask shape {mask.shape} does not match ({batch}, {len(steps)})")
    states: List[Tensor] = []
    for t, x_t in enumerate(steps):
        h_new = gru_cell(x_t, h, params)
        if mask is None:
            h = h_new
        else:
            m = mask[:, t:t + 1].astype(params.w_h.dtype)
            h = h + m * (h_new - h)
        states.append(h)
    return h, states
