"""
Run configuration.

One pydantic model per concern; RunConfig bundles them. Files are flat
INI-style `key = value` text with one section per concern:

    [model]
    variant = HSVAE
    prior_alpha = 8

Command-line flags override file values as dotted keys ("model.prior_alpha").
Environment variables are intentionally not read.
"""

import configparser
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ContractError

logger = logging.getLogger(__name__)

SECTIONS = ("model", "train", "classifier", "synth", "data")


class Variant(str, Enum):
    VAE = "VAE"
    VAE_L1 = "VAE_L1"
    VAE_L2 = "VAE_L2"
    MATVAE = "MATVAE"
    HSVAE = "HSVAE"

    @property
    def gaussian_posterior(self) -> bool:
        return self is not Variant.HSVAE


class ModelConfig(BaseModel):
    """Architecture, objective weights and prior settings."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    variant: Variant = Variant.HSVAE

    # Dimensions (desk scale; the full-size setting is H=512, E=256, D=32 or 768)
    latent_dim: int = Field(16, gt=0)
    hidden_dim: int = Field(64, gt=0)
    embed_dim: int = Field(32, gt=0)

    # Objective weights
    psi: float = Field(0.5, ge=0)
    lam: float = Field(0.5, ge=0, alias="lambda")
    penalty_weight: float = Field(0.1, ge=0)

    # Monte Carlo counts: z-draws per gate draw, gate draws per sentence
    mc_z: int = Field(1, ge=1)
    mc_gamma: int = Field(1, ge=1)

    # Priors
    prior_alpha: float = Field(1.0, gt=0)
    prior_beta: float = Field(1.0, gt=0)
    spike_std: float = Field(1e-2, gt=0, lt=1)
    temperature: float = Field(0.5, gt=0)

    # Estimators
    kl_estimator: Literal["paired", "mc"] = "paired"
    beta_sampler: Literal["gamma", "inverse_cdf"] = "gamma"

    # MAT-VAE
    matvae_prior_weight: float = Field(0.5, ge=0, le=1)
    matvae_kl: Literal["bound", "mc", "slab"] = "bound"
    mmd_bandwidth: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def check_matvae_bound(self) -> "ModelConfig":
        if self.matvae_kl == "bound" and self.matvae_prior_weight >= 1.0:
            raise ValueError("matvae_kl = bound needs matvae_prior_weight < 1")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(0.0008, gt=0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(5, ge=1)
    seed: int = Field(0, ge=0)

    # KL weights: constant, or linear warmup from 0 to (psi, lambda)
    kl_schedule: Literal["constant", "linear"] = "constant"
    warmup_steps: int = Field(2000, ge=1)

    clip_norm: float = Field(5.0, gt=0)
    checkpoint_every: int = Field(1, ge=1)

    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)

    dtype: Literal["float32", "float64"] = "float32"

    # Average Hoyer on the dev split after every epoch
    dev_hoyer: bool = False


class ClassifierConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden_width: int = Field(32, gt=0)
    hidden_layers: int = Field(2, ge=1)
    negative_slope: float = Field(0.01, ge=0)
    samples: int = Field(5, ge=1)
    frozen: bool = True
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(0.0008, gt=0)


class SynthSpec(BaseModel):
    """Synthetic labeled corpus: per-class Zipf vocabularies plus a shared one."""

    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(2, ge=1)
    class_vocab_size: int = Field(80, ge=1)
    shared_vocab_size: int = Field(40, ge=0)
    shared_fraction: float = Field(0.5, ge=0, le=1)
    min_length: int = Field(5, ge=1, le=200)
    max_length: int = Field(15, ge=1, le=200)
    sentences_per_class: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "SynthSpec":
        if self.min_length > self.max_length:
            raise ValueError(f"min_length {self.min_length} exceeds max_length {self.max_length}")
        if self.shared_fraction > 0 and self.shared_vocab_size == 0:
            raise ValueError("shared_fraction > 0 needs a non-empty shared vocabulary")
        return self


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vocab_cap: int = Field(20000, ge=1)
    max_length: int = Field(200, ge=1, le=200)
    train_per_class: int = Field(10000, ge=1)
    eval_per_class: int = Field(1000, ge=1)
    pretokenized: bool = False


class RunConfig(BaseSettings):
    """Everything a subcommand needs, validated up front."""

    model_config = SettingsConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    synth: SynthSpec = Field(default_factory=SynthSpec)
    data: DataConfig = Field(default_factory=DataConfig)

    @classmethod
    def settings_customise_sources(cls, settings_cls, init_settings, env_settings,
                                   dotenv_settings, file_secret_settings):
        # explicit values only; no environment, dotenv or secrets
        return (init_settings,)

    @model_validator(mode="after")
    def check_cross_section(self) -> "RunConfig":
        if self.model.variant is Variant.MATVAE and self.train.batch_size < 2:
            raise ValueError("MATVAE needs train.batch_size >= 2 for the MMD term")
        return self


def _coerce(raw: str) -> Any:
    value = raw.strip()
    if value.lower() in ("", "none", "null"):
        return None
    return value


def read_ini(path: str) -> Dict[str, Dict[str, Any]]:
    """Parse a config file into {section: {key: value}}; unknown sections are rejected."""
    file_path = Path(path)
    if not file_path.is_file():
        raise ContractError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(file_path, encoding="utf-8")
    except configparser.Error as e:
        raise ContractError(f"malformed config file {path}: {e}")
    data: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ContractError(f"unknown config section '{section}' (expected one of {', '.join(SECTIONS)})")
        data[section] = {key: _coerce(value) for key, value in parser.items(section)}
    return data


def _apply_overrides(data: Dict[str, Dict[str, Any]], overrides: Dict[str, Any]) -> None:
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ContractError(f"invalid config key '{dotted}'")
        data.setdefault(section, {})[key] = value


def build_run_config(data: Dict[str, Dict[str, Any]]) -> RunConfig:
    try:
        return RunConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ContractError(f"invalid config key '{key}': {first['msg']}")


def update_run_config(run: RunConfig, section: str, update: Dict[str, Any]) -> RunConfig:
    """Copy of `run` with one section's fields replaced, validated like a loaded file."""
    if section not in SECTIONS:
        raise ContractError(f"unknown config section '{section}'")
    data = run.model_dump()
    data[section].update(update)
    return build_run_config(data)


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a RunConfig from an optional file plus dotted-key overrides.

    Args:
        path: INI-style config file, or None for defaults
        overrides: {"section.key": value}; None values are ignored

    Returns:
        Validated RunConfig

    Raises:
        ContractError: unknown section/key or invalid value, naming the key
    """
    data = read_ini(path) if path else {}
    _apply_overrides(data, overrides or {})
    run = build_run_config(data)
    logger.debug(f"Resolved config: {flatten_config(run)}")
    return run


def flatten_config(run: RunConfig) -> List[Tuple[str, Any]]:
    """(dotted key, value) pairs in a stable order."""
    pairs: List[Tuple[str, Any]] = []
    for section in SECTIONS:
        record = getattr(run, section).model_dump(mode="json", by_alias=True)
        for key in sorted(record):
            pairs.append((f"{section}.{key}", record[key]))
    return pairs


def write_ini(run: RunConfig, path: str) -> None:
    lines: List[str] = []
    for section in SECTIONS:
        record = getattr(run, section).model_dump(mode="json", by_alias=True)
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {_format_value(value)}" for key, value in sorted(record.items()))
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)
