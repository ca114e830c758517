"""Seeded random streams with draw accounting."""

import hashlib
import logging
from typing import Any, Dict, Tuple, Union

import numpy as np

from ..errors import ContractError

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
SUPPORTED_ALGORITHMS = ("PCG64",)

Shape = Union[int, Tuple[int, ...]]


def purpose_tag(purpose: str) -> int:
    """64-bit tag of a stream purpose (BLAKE2b, little-endian)."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """
    A reproducible stream of random draws.

    Identical (seed, algorithm, draw sequence) reproduces identical samples
    bit-exactly. Child streams are derived as seed XOR purpose_tag(purpose).
    A stream must not be shared between concurrent consumers.
    """

    def __init__(self, seed: int, algorithm: str = "PCG64"):
        if algorithm not in SUPPORTED_ALGORITHMS:
            raise ContractError(f"unsupported RNG algorithm '{algorithm}'")
        self.seed = int(seed) & MASK64
        self.algorithm = algorithm
        self.draws = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, purpose: str) -> "RngStream":
        return RngStream(self.seed ^ purpose_tag(purpose), self.algorithm)

    def _count(self, arr: np.ndarray) -> np.ndarray:
        self.draws += int(np.size(arr))
        return arr

    def normal(self, shape: Shape) -> np.ndarray:
        return self._count(self._gen.standard_normal(shape))

    def uniform(self, shape: Shape) -> np.ndarray:
        return self._count(self._gen.random(shape))

    def gamma(self, shape_param: np.ndarray) -> np.ndarray:
        """Unit-rate Gamma draws, one per entry of shape_param."""
        return self._count(self._gen.standard_gamma(np.asarray(shape_param, dtype=np.float64)))

    def integers(self, low: int, high: int, size: Shape) -> np.ndarray:
        return self._count(self._gen.integers(low, high, size=size))

    def choice(self, n: int, size: Shape, p: np.ndarray) -> np.ndarray:
        return self._count(self._gen.choice(n, size=size, p=p))

    def permutation(self, n: int) -> np.ndarray:
        return self._count(self._gen.permutation(n))

    def state(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "algorithm": self.algorithm,
            "draws": self.draws,
            "bit_generator": self._gen.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "RngStream":
        stream = cls(state["seed"], state["algorithm"])
        stream._gen.bit_generator.state = state["bit_generator"]
        stream.draws = int(state["draws"])
        return stream

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, algorithm={self.algorithm}, draws={self.draws})"
