"""
Optimization loop: Adam, gradient clipping, KL-weight schedule, epoch logs
and checkpoints.

Randomness flows from TrainConfig.seed through derived streams:

    shuffle:<epoch>     batch order of each epoch
    noise               every sampling step of the objective (saved for resume)
    dev-hoyer:<epoch>   posterior samples for the dev Average Hoyer
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .config import TrainConfig, Variant
from .diffcore.params import ParameterStore
from .diffcore.rng import RngStream
from .errors import ContractError, NonFiniteError, TrainingAborted
from .metrics import average_hoyer
from .model.checkpoint import Checkpoint, save_checkpoint
from .model.network import TextVAE
from .model.objectives import compute_elbo
from .textdata import LabeledCorpus, batch_indices, make_batch

logger = logging.getLogger(__name__)

# Consecutive failed steps before training is aborted
MAX_NONFINITE = 2


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, store: ParameterStore) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in store.items()},
            v={name: np.zeros_like(p.data) for name, p in store.items()},
        )

    def to_arrays(self) -> Dict[str, np.ndarray]:
        out = {f"opt.m.{name}": value for name, value in self.m.items()}
        out.update({f"opt.v.{name}": value for name, value in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], t: int, store: ParameterStore) -> "AdamState":
        state = cls.zeros(store)
        for name in state.m:
            if f"opt.m.{name}" not in arrays or f"opt.v.{name}" not in arrays:
                raise ContractError(f"optimizer state is missing moments for '{name}'")
            state.m[name] = arrays[f"opt.m.{name}"].astype(state.m[name].dtype)
            state.v[name] = arrays[f"opt.v.{name}"].astype(state.v[name].dtype)
        state.t = t
        return state


def adam_step(store: ParameterStore, grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> bool:
    """
    One Adam update of every parameter in `grads`.

    Returns:
        False (and leaves everything unchanged) if any gradient is non-finite
    """
    for name, g in grads.items():
        if g.shape != store[name].shape:
            raise ContractError(f"gradient for '{name}' has shape {g.shape}, parameter {store[name].shape}")
        if not np.all(np.isfinite(g)):
            logger.warning(f"Skipping Adam step: non-finite gradient for '{name}'")
            return False
    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        param = store[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.data = (param.data - update).astype(param.dtype)
    return True


def clip_gradients(grads: Dict[str, np.ndarray], clip_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients jointly so their global L2 norm is at most clip_norm."""
    norm = float(np.sqrt(sum(np.sum(np.square(g, dtype=np.float64)) for g in grads.values())))
    if norm <= clip_norm or not np.isfinite(norm):
        return grads, norm
    scale = clip_norm / norm
    return {name: (g.astype(np.float64) * scale).astype(g.dtype) for name, g in grads.items()}, norm


def kl_weight(step: int, target: float, schedule: str, warmup_steps: int) -> float:
    """Weight used at optimizer step `step` (1-based)."""
    if schedule == "constant":
        return target
    if schedule == "linear":
        return target * min(1.0, step / float(warmup_steps))
    raise ContractError(f"unknown KL schedule '{schedule}'")


@dataclass
class FitResult:
    history: List[Dict[str, object]] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    steps: int = 0

    @property
    def final_checkpoint(self) -> Optional[str]:
        return self.checkpoints[-1] if self.checkpoints else None


def _min_batch(model: TextVAE) -> int:
    return 2 if model.variant is Variant.MATVAE else 1


def _mean_records(records: List[Dict[str, float]], weights: List[int]) -> Dict[str, float]:
    keys = records[0].keys()
    total = float(sum(weights))
    return {k: sum(r[k] * w for r, w in zip(records, weights)) / total for k in keys}


def fit(model: TextVAE, corpus: LabeledCorpus, config: TrainConfig,
        log_path: Optional[str] = None, checkpoint_dir: Optional[str] = None,
        dev_corpus: Optional[LabeledCorpus] = None, resume: Optional[Checkpoint] = None,
        progress: bool = False) -> FitResult:
    """
    Train a model.

    Args:
        model: Model to train in place
        corpus: Training sentences
        config: Optimization settings
        log_path: JSONL file receiving one record per epoch
        checkpoint_dir: Directory for epoch-NNN.ckpt files
        dev_corpus: Corpus for the per-epoch Average Hoyer (config.dev_hoyer)
        resume: Checkpoint to continue from (its params must already be in model)
        progress: Show a tqdm bar per epoch

    Returns:
        FitResult with the epoch history and checkpoint paths

    Raises:
        TrainingAborted: two consecutive steps with a non-finite objective
    """
    if not len(corpus):
        raise ContractError("cannot train on an empty corpus")
    if model.variant is Variant.MATVAE and len(corpus) < 2:
        raise ContractError("MATVAE needs at least 2 training sentences")
    root = RngStream(config.seed)
    mc = model.config

    if resume is not None:
        adam = AdamState.from_arrays(resume.optimizer, resume.optimizer_step, model.store)
        noise = RngStream.from_state(resume.rng_state) if resume.rng_state else root.derive("noise")
        start_epoch, step = resume.epoch, resume.step
        logger.info(f"Resuming at epoch {start_epoch + 1}, step {step}")
    else:
        adam = AdamState.zeros(model.store)
        noise = root.derive("noise")
        start_epoch, step = 0, 0

    if log_path and resume is None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(log_path).write_text("", encoding="utf-8")

    result = FitResult(steps=step)
    failures = 0
    for epoch in range(start_epoch + 1, config.epochs + 1):
        chunks = batch_indices(len(corpus), config.batch_size, root.derive(f"shuffle:{epoch}"),
                               min_size=_min_batch(model))
        records, weights = [], []
        clamped, skipped = 0, 0
        psi_t, lam_t = mc.psi, mc.lam
        for idx in tqdm(chunks, desc=f"epoch {epoch}/{config.epochs}", disable=not progress, leave=False):
            batch = make_batch([corpus.sentences[i] for i in idx])
            psi_t = kl_weight(step + 1, mc.psi, config.kl_schedule, config.warmup_steps)
            lam_t = kl_weight(step + 1, mc.lam, config.kl_schedule, config.warmup_steps)
            model.store.zero_grad()
            try:
                terms = compute_elbo(model, batch, noise, psi_t, lam_t)
                objective = terms.objective.item()
                if not np.isfinite(objective):
                    raise NonFiniteError("objective")
                (-terms.objective).backward()
            except NonFiniteError as e:
                failures += 1
                skipped += 1
                logger.warning(f"Non-finite value at step {step + 1} (op {e.op})")
                if failures >= MAX_NONFINITE:
                    raise TrainingAborted(
                        f"objective was non-finite for {failures} consecutive steps "
                        f"(epoch {epoch}, step {step + 1}, last op {e.op})"
                    ) from e
                continue
            failures = 0
            grads, _ = clip_gradients(model.store.grads(), config.clip_norm)
            if not adam_step(model.store, grads, adam, config.lr,
                             config.adam_beta1, config.adam_beta2, config.adam_eps):
                skipped += 1
            step += 1
            values = terms.values()
            values.setdefault("gate_mean", 0.0)
            records.append(values)
            weights.append(batch.size)
            clamped += terms.clamped

        if not records:
            raise TrainingAborted(f"no successful step in epoch {epoch}")
        means = _mean_records(records, weights)
        record: Dict[str, object] = {
            "epoch": epoch,
            "step": step,
            "reconstruction": means["reconstruction"],
            "kl_z": means["kl_z"],
            "kl_gamma": means["kl_gamma"],
            "mmd": means["mmd"],
            "penalty": means["penalty"],
            "objective": means["objective"],
            "gate_mean": means["gate_mean"] if model.variant is Variant.HSVAE else None,
            "psi_t": psi_t,
            "lambda_t": lam_t,
            "beta_clamped": clamped,
            "skipped_steps": skipped,
        }
        if config.dev_hoyer and dev_corpus is not None and len(dev_corpus):
            report, _ = average_hoyer(dev_corpus, model, "posterior-mean")
            sample_report, _ = average_hoyer(dev_corpus, model, "posterior-sample",
                                             root.derive(f"dev-hoyer:{epoch}"))
            record["dev_average_hoyer_mean"] = report.average_hoyer
            record["dev_average_hoyer_sample"] = sample_report.average_hoyer
        result.history.append(record)
        result.steps = step
        logger.info(
            f"Epoch {epoch}: rec={record['reconstruction']:.3f} kl_z={record['kl_z']:.3f} "
            f"kl_gamma={record['kl_gamma']:.3f} objective={record['objective']:.3f}"
        )
        if clamped:
            logger.warning(f"Beta sampler clamped {clamped} draws in epoch {epoch}")
        if log_path:
            with open(log_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

        if checkpoint_dir and (epoch % config.checkpoint_every == 0 or epoch == config.epochs):
            path = str(Path(checkpoint_dir) / f"epoch-{epoch:03d}.ckpt")
            save_checkpoint(path, model, epoch=epoch, step=step, optimizer=adam.to_arrays(),
                            optimizer_step=adam.t, rng_state=noise.state())
            result.checkpoints.append(path)
            logger.info(f"Checkpoint: {path}")
    return result


def evaluate(model: TextVAE, corpus: LabeledCorpus, batch_size: int = 32, seed: int = 0) -> Dict[str, float]:
    """Sentence-weighted mean ElboTerms on a corpus, without parameter updates."""
    if not len(corpus):
        raise ContractError("cannot evaluate on an empty corpus")
    rng = RngStream(seed).derive("evaluate")
    records, weights = [], []
    with model.no_grad():
        for idx in batch_indices(len(corpus), batch_size, min_size=_min_batch(model)):
            batch = make_batch([corpus.sentences[i] for i in idx])
            values = compute_elbo(model, batch, rng).values()
            values.setdefault("gate_mean", 0.0)
            records.append(values)
            weights.append(batch.size)
    return _mean_records(records, weights)
