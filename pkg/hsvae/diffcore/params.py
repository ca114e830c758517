"""Named parameter storage."""

import hashlib
import logging
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

logger = logging.getLogger(__name__)


class ParameterStore:
    """
    Ordered collection of named leaf tensors.

    Names are dotted paths ("encoder.gru.w_x"); the prefix before the first
    dot groups parameters into encoder, heads and decoder. Iteration order is
    insertion order, which is fixed by model construction.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter '{name}' already exists")
        tensor = Tensor(value, requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ContractError(f"unknown parameter '{name}'")

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self, prefix: Optional[str] = None) -> List[str]:
        return [n for n in self._params if prefix is None or n.startswith(prefix)]

    def items(self, prefix: Optional[str] = None) -> Iterator[Tuple[str, Tensor]]:
        for name in self.names(prefix):
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def grads(self) -> Dict[str, np.ndarray]:
        """Accumulated gradients; parameters the graph never reached get zeros."""
        return {
            name: t.grad if t.grad is not None else np.zeros_like(t.data)
            for name, t in self._params.items()
        }

    def num_values(self, prefix: Optional[str] = None) -> int:
        return sum(t.size for _, t in self.items(prefix))

    def flatten(self, prefix: Optional[str] = None) -> np.ndarray:
        parts = [t.data.reshape(-1).astype(np.float64) for _, t in self.items(prefix)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def flatten_grads(self, prefix: Optional[str] = None) -> np.ndarray:
        grads = self.grads()
        parts = [grads[name].reshape(-1).astype(np.float64) for name in self.names(prefix)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def assign_flat(self, vector: np.ndarray, prefix: Optional[str] = None) -> None:
        vector = np.asarray(vector)
        expected = self.num_values(prefix)
        if vector.size != expected:
            raise ContractError(f"flat vector has {vector.size} values, store expects {expected}")
        offset = 0
        for _, t in self.items(prefix):
            t.data = vector[offset:offset + t.size].reshape(t.shape).astype(t.dtype)
            offset += t.size

    def checksum(self, prefixes: Sequence[str] = ("encoder.", "heads.")) -> str:
        """sha256 over names, shapes and raw bytes of the selected parameters."""
        digest = hashlib.sha256()
        for name in sorted(self._params):
            if not any(name.startswith(p) for p in prefixes):
                continue
            data = np.ascontiguousarray(self._params[name].data)
            digest.update(name.encode("utf-8"))
            digest.update(str(data.shape).encode("ascii"))
            digest.update(data.tobytes())
        return digest.hexdigest()

    @contextmanager
    def frozen(self, prefixes: Sequence[str] = ("encoder.", "heads.")) -> Iterator[None]:
        """Stop gradient flow into the selected parameters inside the block."""
        touched = [t for name, t in self._params.items()
                   if any(name.startswith(p) for p in prefixes) and t.requires_grad]
        for t in touched:
            t.requires_grad = False
        try:
            yield
        finally:
            for t in touched:
                t.requires_grad = True

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore.from_arrays({n: t.data.astype(dtype) for n, t in self._params.items()})

    def state(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ContractError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, t in self._params.items():
            value = np.asarray(arrays[name])
            if value.shape != t.shape:
                raise ContractError(f"shape mismatch for '{name}': {value.shape} vs {t.shape}")
            t.data = value.astype(t.dtype)

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "ParameterStore":
        store = cls()
        for name, value in arrays.items():
            store._params[name] = Tensor(value, requires_grad=True, dtype=np.asarray(value).dtype)
        return store
