"""
Checkpoint container.

Layout:

    b"SLLAB-CKPT-1\\n"
    uint64 little-endian manifest length in bytes
    manifest: UTF-8 `key = value` lines
    arrays: little-endian float32 values, in manifest order

Array entries appear in the manifest as `array.<name> = d0,d1,...`; a scalar
has an empty shape. Parameters are named as in the ParameterStore, Adam
moments as `opt.m.<name>` / `opt.v.<name>`.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..config import ModelConfig
from ..diffcore.params import ParameterStore
from ..errors import ContractError
from .network import TextVAE

logger = logging.getLogger(__name__)

HEADER = b"SLLAB-CKPT-1\n"
ARRAY_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab_size: int
    params: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_step: int = 0
    epoch: int = 0
    step: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    meta: Dict[str, str] = field(default_factory=dict)

    def build_model(self, dtype=np.float32) -> TextVAE:
        store = ParameterStore.from_arrays(self.params).astype(dtype)
        return TextVAE(self.model_config, self.vocab_size, store=store)


def _format_shape(shape: Tuple[int, ...]) -> str:
    return ",".join(str(d) for d in shape)


def _parse_shape(text: str) -> Tuple[int, ...]:
    return tuple(int(d) for d in text.split(",")) if text.strip() else ()


def save_checkpoint(path: str, model: TextVAE, epoch: int = 0, step: int = 0,
                    optimizer: Optional[Dict[str, np.ndarray]] = None, optimizer_step: int = 0,
                    rng_state: Optional[Dict[str, Any]] = None,
                    meta: Optional[Dict[str, str]] = None) -> None:
    """
    Write a model (and optionally optimizer/RNG state) to `path`.

    Args:
        path: Output file
        model: Model whose config and parameters are stored
        epoch: Completed epochs
        step: Completed optimizer steps
        optimizer: Extra named arrays, e.g. Adam moments
        optimizer_step: Adam time step
        rng_state: RngStream.state() of the training noise stream
        meta: Free-form string entries (stored as meta.<key>)
    """
    lines: List[str] = [f"format = {HEADER.decode('ascii').strip()}", f"vocab_size = {model.vocab_size}"]
    for key, value in sorted(model.config.model_dump(mode="json", by_alias=True).items()):
        lines.append(f"model.{key} = {json.dumps(value)}")
    lines.append(f"train.epoch = {epoch}")
    lines.append(f"train.step = {step}")
    lines.append(f"optimizer.step = {optimizer_step}")
    if rng_state is not None:
        lines.append(f"rng.state = {json.dumps(rng_state, sort_keys=True)}")
    for key, value in sorted((meta or {}).items()):
        lines.append(f"meta.{key} = {value}")

    arrays: List[Tuple[str, np.ndarray]] = list(model.store.state().items())
    arrays.extend(sorted((optimizer or {}).items()))
    for name, value in arrays:
        lines.append(f"array.{name} = {_format_shape(value.shape)}")
    manifest = ("\n".join(lines) + "\n").encode("utf-8")

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as f:
        f.write(HEADER)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for _, value in arrays:
            f.write(np.ascontiguousarray(value, dtype=ARRAY_DTYPE).tobytes())
    logger.debug(f"Wrote checkpoint {out} ({len(arrays)} arrays)")


def _parse_manifest(text: str) -> List[Tuple[str, str]]:
    entries = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ContractError(f"checkpoint manifest line {number} is not 'key = value'")
        entries.append((key.strip(), value))
    return entries


def load_checkpoint(path: str) -> Checkpoint:
    file_path = Path(path)
    if not file_path.is_file():
        raise ContractError(f"checkpoint not found: {path}")
    blob = file_path.read_bytes()
    if not blob.startswith(HEADER):
        raise ContractError(f"{path} is not a {HEADER.decode('ascii').strip()} checkpoint")
    offset = len(HEADER)
    (manifest_len,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    entries = _parse_manifest(blob[offset:offset + manifest_len].decode("utf-8"))
    offset += manifest_len

    model_fields: Dict[str, Any] = {}
    scalars: Dict[str, str] = {}
    meta: Dict[str, str] = {}
    arrays: Dict[str, np.ndarray] = {}
    for key, value in entries:
        if key.startswith("model."):
            model_fields[key[len("model."):]] = json.loads(value)
        elif key.startswith("meta."):
            meta[key[len("meta."):]] = value
        elif key.startswith("array."):
            shape = _parse_shape(value)
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * ARRAY_DTYPE.itemsize
            if offset + nbytes > len(blob):
                raise ContractError(f"checkpoint {path} is truncated at array '{key}'")
            arrays[key[len("array."):]] = np.frombuffer(blob, dtype=ARRAY_DTYPE, count=count,
                                                         offset=offset).reshape(shape).copy()
            offset += nbytes
        else:
            scalars[key] = value
    if offset != len(blob):
        raise ContractError(f"checkpoint {path} has {len(blob) - offset} trailing bytes")

    params = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    optimizer = {k: v for k, v in arrays.items() if k.startswith("opt.")}
    rng_state = json.loads(scalars["rng.state"]) if "rng.state" in scalars else None
    return Checkpoint(
        model_config=ModelConfig(**model_fields),
        vocab_size=int(scalars["vocab_size"]),
        params=params,
        optimizer=optimizer,
        optimizer_step=int(scalars.get("optimizer.step", 0)),
        epoch=int(scalars.get("train.epoch", 0)),
        step=int(scalars.get("train.step", 0)),
        rng_state=rng_state,
        meta=meta,
    )


def checkpoint_id(path: str) -> str:
    """Short identifier of a checkpoint file for reports."""
    return Path(path).name
