"""
Minimal reverse-mode automatic differentiation over numpy arrays.

Each primitive computes its forward value with numpy and records a
vector-Jacobian product closure; `Tensor.backward` walks the graph in reverse
topological order. Every op output is checked for finiteness and a
NonFiniteError names the offending op.
"""

import contextvars
import logging
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .. import numerics
from ..errors import ContractError, NonFiniteError

logger = logging.getLogger(__name__)

_DTYPE = contextvars.ContextVar("hsvae_default_dtype", default=np.float32)

Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Set the floating dtype used for new leaf tensors inside the block."""
    token = _DTYPE.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.reset(token)


def get_default_dtype():
    return _DTYPE.get()


class Tensor:
    """An array value with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_vjp")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype if dtype is not None else get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._vjp: Optional[Vjp] = None

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], vjp: Vjp, op: str) -> "Tensor":
        data = np.asarray(data)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._vjp = vjp if out.requires_grad else None
        return out

    # Introspection

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # Backward pass

    def _accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ContractError(f"gradient shape {g.shape} does not match value shape {self.data.shape}")
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError("backward without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        self._accumulate(grad)
        for node in reversed(_topological_order(self)):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is not None and parent.requires_grad:
                    parent._accumulate(g)

    # Operators

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, index): return slice_(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self) -> "Tensor": return exp(self)
    def log(self) -> "Tensor": return log(self)
    def sigmoid(self) -> "Tensor": return sigmoid(self)
    def tanh(self) -> "Tensor": return tanh(self)
    def softplus(self) -> "Tensor": return softplus(self)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def forward_backward(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> Tuple[Tensor, List[np.ndarray]]:
    """
    Evaluate fn(*inputs) and return its value with gradients for every input.

    Inputs that do not reach the output (or do not require grad) get zeros.
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    out.backward()
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    return out, grads


# Elementwise arithmetic

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape),
                   _unbroadcast(-g * a.data / (b.data * b.data), b.shape)), "div")


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def abs_(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


# Linear algebra and shape

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        if a.ndim == 1:
            return g @ b.data.T, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return Tensor.from_op(a.data @ b.data, (a, b), vjp, "matmul")


def transpose(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ContractError(f"transpose expects a matrix, got shape {a.shape}")
    return Tensor.from_op(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: TensorLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ContractError(f"cannot reshape {a.shape} to {shape}: {e}")
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ContractError(f"concat shape mismatch: {[t.shape for t in ts]}: {e}")
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return Tensor.from_op(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ContractError(f"stack shape mismatch: {[t.shape for t in ts]}: {e}")
    return Tensor.from_op(
        out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))), "stack")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)


def slice_(a: TensorLike, index) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def vjp(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            # repeated indices must accumulate
            np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(a.data[index], (a,), vjp, "slice")


# Reductions

def _expand(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def sum_(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(
        a.data.sum(axis=axis, keepdims=keepdims), (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims),), "sum")


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return Tensor.from_op(
        a.data.mean(axis=axis, keepdims=keepdims), (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims) / count,), "mean")


def logsumexp(a: TensorLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    peak = np.max(a.data, axis=axis, keepdims=True)
    out_keep = peak + np.log(np.sum(np.exp(a.data - peak), axis=axis, keepdims=True))
    out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

    def vjp(g):
        g_keep = g if keepdims else np.expand_dims(g, axis)
        return (g_keep * np.exp(a.data - out_keep),)

    return Tensor.from_op(out, (a,), vjp, "logsumexp")


# Nonlinearities

def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g / a.data,), "log")


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * expit(a.data),), "softplus")


def leaky_relu(a: TensorLike, negative_slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, negative_slope).astype(a.dtype)
    return Tensor.from_op(a.data * slope, (a,), lambda g: (g * slope,), "leaky_relu")


def clip(a: TensorLike, lower: Optional[float] = None, upper: Optional[float] = None) -> Tensor:
    """Clamp values; gradient passes only where the input lies inside the range."""
    a = as_tensor(a)
    inside = np.ones(a.shape, dtype=bool)
    if lower is not None:
        inside &= a.data >= lower
    if upper is not None:
        inside &= a.data <= upper
    out = np.clip(a.data, lower, upper)
    return Tensor.from_op(out, (a,), lambda g: (g * inside,), "clip")


def logaddexp(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.logaddexp(a.data, b.data)
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g * np.exp(a.data - out), a.shape),
                   _unbroadcast(g * np.exp(b.data - out), b.shape)), "logaddexp")


def log_gamma(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data.astype(np.float64)
    out = np.asarray(numerics.log_gamma(x)).astype(a.dtype)
    return Tensor.from_op(out, (a,), lambda g: (g * np.asarray(numerics.digamma(x)),), "log_gamma")


def digamma(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data.astype(np.float64)
    out = np.asarray(numerics.digamma(x)).astype(a.dtype)
    return Tensor.from_op(out, (a,), lambda g: (g * np.asarray(numerics.trigamma(x)),), "digamma")


# Lookup and losses

def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of `table` (V, E) selected by an integer id array of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"token id out of range [0, {table.shape[0]}): min={ids.min()} max={ids.max()}")

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return Tensor.from_op(table.data[ids], (table,), vjp, "embedding")


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray,
                          weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Per-row negative log-likelihood of integer targets under softmax(logits).

    Args:
        logits: (N, V) scores
        targets: (N,) integer class ids
        weights: Optional (N,) row weights (0 masks a row out exactly)

    Returns:
        (N,) weighted negative log-likelihoods
    """
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ContractError(f"softmax_cross_entropy shape mismatch: {logits.shape} vs {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ContractError("softmax_cross_entropy target out of range")
    w = np.ones(targets.shape, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    rows = np.arange(targets.size)
    peak = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - peak
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    out = -log_probs[rows, targets] * w

    def vjp(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g * w)[:, None],)

    return Tensor.from_op(out, (logits,), vjp, "softmax_cross_entropy")


def custom(data: np.ndarray, parents: Sequence[Tensor], vjp: Vjp, op: str) -> Tensor:
    """A node whose vector-Jacobian product is supplied by the caller."""
    return Tensor.from_op(np.asarray(data), tuple(parents), vjp, op)
