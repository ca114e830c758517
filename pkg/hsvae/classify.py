"""
Downstream classification probes.

The probe puts an MLP (leaky-ReLU hidden layers) on latent codes of a trained
model and marginalizes over K posterior samples:

    p(y|x) ~= (1/K) * sum_k p(y | z_k)

The simple classifier is the baseline: a GRU text encoder with the same MLP
on its last hidden state, trained end to end.
"""

import logging
from contextlib import nullcontext
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

from .config import ClassifierConfig, ModelConfig
from .diffcore import layers
from .diffcore import tensor as T
from .diffcore.params import ParameterStore
from .diffcore.rng import RngStream
from .diffcore.tensor import Tensor
from .errors import ContractError, FrozenEncoderViolation
from .model.network import TextVAE
from .textdata import Batch, LabeledCorpus, batch_indices, make_batch
from .training import AdamState, adam_step

logger = logging.getLogger(__name__)

ENCODER_PREFIXES = ("encoder.", "heads.")


class AccuracyReport(BaseModel):
    variant: str
    encoder_checkpoint: str
    split: str
    k: int
    accuracy: float
    seed: int
    degenerate: bool = False


class MLPHead:
    """hidden_layers x (linear + leaky ReLU) followed by a linear output layer."""

    def __init__(self, store: ParameterStore, input_dim: int, num_classes: int,
                 config: ClassifierConfig, rng: RngStream, name: str = "classifier.mlp"):
        self.store = store
        self.name = name
        self.config = config
        self.depth = config.hidden_layers + 1
        sizes = [input_dim] + [config.hidden_width] * config.hidden_layers + [num_classes]
        layers.init_mlp(store, name, sizes, rng)

    def logits(self, x: Tensor) -> Tensor:
        slope = self.config.negative_slope
        return layers.mlp(self.store, self.name, x, self.depth,
                          activation=lambda h: T.leaky_relu(h, slope))

    def log_probs(self, x: Tensor) -> Tensor:
        logits = self.logits(x)
        return logits - T.logsumexp(logits, axis=-1, keepdims=True)


def _log_marginal(log_probs: List[Tensor], targets: np.ndarray) -> Tensor:
    """(B,) log of the sample-averaged probability of each target."""
    rows = np.arange(targets.size)
    picked = [lp[rows, targets] for lp in log_probs]
    return T.logsumexp(T.stack(picked, axis=0), axis=0) - float(np.log(len(log_probs)))


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax predictions equal to labels; ties go to the lowest class id."""
    if len(labels) == 0:
        raise ContractError("accuracy of an empty split")
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))


class LatentProbe:
    """Classifier over codes of a (usually frozen) TextVAE."""

    def __init__(self, model: TextVAE, num_classes: int, config: ClassifierConfig,
                 rng: Optional[RngStream] = None):
        if num_classes < 1:
            raise ContractError("num_classes must be positive")
        self.model = model
        self.config = config
        self.num_classes = num_classes
        self.store = ParameterStore()
        self.head = MLPHead(self.store, model.config.latent_dim, num_classes, config,
                            rng or RngStream(0).derive("classifier-init"))

    def _sample_log_probs(self, batch: Batch, rng: RngStream, k: int) -> List[Tensor]:
        feature = self.model.encode(batch)
        return [self.head.log_probs(self.model.sample_codes(feature, rng)) for _ in range(k)]

    def predict_marginalized(self, batch: Batch, rng: RngStream, k: Optional[int] = None) -> np.ndarray:
        """(B, C) class probabilities averaged over k posterior samples."""
        k = k or self.config.samples
        if k < 1:
            raise ContractError(f"K must be at least 1, got {k}")
        with self.model.no_grad(), self.store.frozen(prefixes=("",)):
            probs = [np.exp(lp.data.astype(np.float64)) for lp in self._sample_log_probs(batch, rng, k)]
        return np.mean(probs, axis=0)

    def predict_corpus(self, corpus: LabeledCorpus, rng: RngStream, k: Optional[int] = None,
                       batch_size: int = 64) -> np.ndarray:
        return np.concatenate([
            self.predict_marginalized(make_batch([corpus.sentences[i] for i in idx]), rng, k)
            for idx in batch_indices(len(corpus), batch_size)
        ], axis=0)


def predict_marginalized(batch: Batch, probe: LatentProbe, k: int, rng: RngStream) -> np.ndarray:
    return probe.predict_marginalized(batch, rng, k)


def train_classifier(corpus: LabeledCorpus, model: TextVAE, config: ClassifierConfig,
                     eval_corpus: Optional[LabeledCorpus] = None, seed: int = 0,
                     encoder_checkpoint: str = "", split: str = "test",
                     progress: bool = False) -> Tuple[LatentProbe, AccuracyReport]:
    """
    Train the probe on K-sample marginalized predictions.

    The loss is -log((1/K) sum_k p(y|z_k)). With config.frozen the encoder and
    posterior heads receive no updates, and a checksum taken before and after
    training proves it.

    Raises:
        FrozenEncoderViolation: frozen encoder parameters changed
    """
    if not corpus.labeled:
        raise ContractError("train_classifier needs a labeled corpus")
    root = RngStream(seed)
    probe = LatentProbe(model, len(corpus.classes), config, root.derive("classifier-init"))
    before = model.store.checksum(ENCODER_PREFIXES)
    labels = corpus.label_ids()
    noise = root.derive("classifier-noise")

    trainable = [probe.store]
    if not config.frozen:
        trainable.append(model.store)
    states = [AdamState.zeros(s) for s in trainable]

    frozen_ctx = model.store.frozen(prefixes=("",)) if config.frozen else nullcontext()
    with frozen_ctx:
        for epoch in tqdm(range(1, config.epochs + 1), desc="probe", disable=not progress):
            losses = []
            for idx in batch_indices(len(corpus), config.batch_size, root.derive(f"classifier-shuffle:{epoch}")):
                batch = make_batch([corpus.sentences[i] for i in idx])
                for s in trainable:
                    s.zero_grad()
                log_probs = probe._sample_log_probs(batch, noise, config.samples)
                loss = -T.mean(_log_marginal(log_probs, labels[idx]))
                loss.backward()
                for s, state in zip(trainable, states):
                    adam_step(s, s.grads(), state, config.lr)
                losses.append(loss.item())
            logger.info(f"Classifier epoch {epoch}: loss={np.mean(losses):.4f}")

    after = model.store.checksum(ENCODER_PREFIXES)
    if config.frozen and before != after:
        raise FrozenEncoderViolation(f"encoder checksum changed during probe training ({before[:12]} -> {after[:12]})")

    target = eval_corpus if eval_corpus is not None else corpus
    probs = probe.predict_corpus(target, root.derive("classifier-eval"))
    report = AccuracyReport(
        variant=model.variant.value,
        encoder_checkpoint=encoder_checkpoint,
        split=split,
        k=config.samples,
        accuracy=accuracy(probs, target.label_ids()),
        seed=seed,
        degenerate=len(corpus.classes) < 2,
    )
    if report.degenerate:
        logger.warning("Single-class corpus: accuracy is trivially 1.0")
    return probe, report


class SimpleClassifier:
    """GRU encoder + MLP head, all parameters trained."""

    def __init__(self, vocab_size: int, num_classes: int, model_config: ModelConfig,
                 config: ClassifierConfig, rng: RngStream):
        self.config = config
        self.store = ParameterStore()
        self.store.add("encoder.embedding", 0.1 * rng.normal((vocab_size, model_config.embed_dim)))
        layers.init_gru(self.store, "encoder.gru", model_config.embed_dim, model_config.hidden_dim, rng)
        self.head = MLPHead(self.store, model_config.hidden_dim, num_classes, config, rng)

    def log_probs(self, batch: Batch) -> Tensor:
        table = self.store["encoder.embedding"]
        steps = [T.embedding(table, batch.encoder_ids[:, t]) for t in range(batch.encoder_ids.shape[1])]
        feature, _ = layers.run_gru(steps, layers.GRUParams.from_store(self.store, "encoder.gru"),
                                    mask=batch.encoder_mask)
        return self.head.log_probs(feature)

    def predict(self, corpus: LabeledCorpus, batch_size: int = 64) -> np.ndarray:
        out = []
        with self.store.frozen(prefixes=("",)):
            for idx in batch_indices(len(corpus), batch_size):
                out.append(np.exp(self.log_probs(make_batch([corpus.sentences[i] for i in idx])).data))
        return np.concatenate(out, axis=0)


def simple_classifier(corpus: LabeledCorpus, model_config: ModelConfig, config: ClassifierConfig,
                      eval_corpus: Optional[LabeledCorpus] = None, seed: int = 0,
                      split: str = "test") -> Tuple[SimpleClassifier, AccuracyReport]:
    """Train the end-to-end baseline with cross-entropy and report held-out accuracy."""
    if not corpus.labeled:
        raise ContractError("simple_classifier needs a labeled corpus")
    root = RngStream(seed)
    clf = SimpleClassifier(len(corpus.vocab), len(corpus.classes), model_config, config,
                           root.derive("simple-init"))
    labels = corpus.label_ids()
    state = AdamState.zeros(clf.store)
    for epoch in range(1, config.epochs + 1):
        losses = []
        for idx in batch_indices(len(corpus), config.batch_size, root.derive(f"simple-shuffle:{epoch}")):
            batch = make_batch([corpus.sentences[i] for i in idx])
            clf.store.zero_grad()
            log_probs = clf.log_probs(batch)
            loss = -T.mean(log_probs[np.arange(len(idx)), labels[idx]])
            loss.backward()
            adam_step(clf.store, clf.store.grads(), state, config.lr)
            losses.append(loss.item())
        logger.info(f"Simple classifier epoch {epoch}: loss={np.mean(losses):.4f}")

    target = eval_corpus if eval_corpus is not None else corpus
    report = AccuracyReport(
        variant="SIMPLE",
        encoder_checkpoint="",
        split=split,
        k=1,
        accuracy=accuracy(clf.predict(target), target.label_ids()),
        seed=seed,
        degenerate=len(corpus.classes) < 2,
    )
    if report.degenerate:
        logger.warning("Single-class corpus: accuracy is trivially 1.0")
    return clf, report
