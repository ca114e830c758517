"""
Sparsity-pattern and corpus-statistics analysis.

gamma_class: per-class average of binarized posterior gate means.
class_kl_matrix: pairwise KL between add-1 smoothed class unigram distributions.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import rel_entr
from scipy.stats import spearmanr

from .errors import ContractError
from .model.network import TextVAE
from .textdata import RESERVED_TOKENS, LabeledCorpus, batch_indices, make_batch

logger = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass
class ClassPattern:
    class_id: str
    gamma: np.ndarray
    support: int

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if np.any((self.gamma < 0) | (self.gamma > 1)):
            raise ContractError(f"gamma_class of '{self.class_id}' must lie in [0, 1]")
        if self.support < 1:
            raise ContractError(f"class '{self.class_id}' has no sentences")


@dataclass
class ClassKLMatrix:
    class_ids: List[str]
    matrix: np.ndarray
    smoothing: float = 1.0

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.matrix, index=self.class_ids, columns=self.class_ids)
        frame.index.name = "class"
        return frame

    def mean_off_diagonal(self) -> float:
        return mean_off_diagonal(self.matrix)


def binarize(gate_means: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    """0 where the mean is below the threshold, 1 otherwise (so exactly 0.5 gives 1)."""
    return (np.asarray(gate_means) >= threshold).astype(np.float64)


def patterns_from_gate_means(gate_means: np.ndarray, labels: Sequence[str],
                             classes: Sequence[str]) -> List[ClassPattern]:
    """Average the binarized gate means of each class's sentences."""
    gate_means = np.asarray(gate_means, dtype=np.float64)
    if gate_means.shape[0] != len(labels):
        raise ContractError(f"{gate_means.shape[0]} gate vectors for {len(labels)} labels")
    labels_arr = np.asarray(labels)
    bits = binarize(gate_means)
    patterns = []
    for cls in classes:
        rows = labels_arr == cls
        if not np.any(rows):
            raise ContractError(f"class '{cls}' has no sentences")
        patterns.append(ClassPattern(cls, bits[rows].mean(axis=0), int(rows.sum())))
    return patterns


def gate_means_for(corpus: LabeledCorpus, model: TextVAE, batch_size: int = 64) -> np.ndarray:
    rows = [model.gate_means(make_batch([corpus.sentences[i] for i in idx]))
            for idx in batch_indices(len(corpus), batch_size)]
    return np.concatenate(rows, axis=0)


def gamma_class(corpus: LabeledCorpus, model: TextVAE, batch_size: int = 64) -> List[ClassPattern]:
    """Per-class sparsity signature of an HSVAE model over a labeled corpus."""
    if not corpus.labeled:
        raise ContractError("gamma_class needs a labeled corpus")
    patterns = patterns_from_gate_means(gate_means_for(corpus, model, batch_size),
                                        corpus.labels, corpus.classes)
    logger.info(f"gamma_class over {len(patterns)} classes, D={patterns[0].gamma.size}")
    return patterns


def pattern_distance(a: Union[ClassPattern, np.ndarray], b: Union[ClassPattern, np.ndarray],
                     threshold: float = THRESHOLD) -> int:
    """Hamming distance between thresholded pattern vectors."""
    va = a.gamma if isinstance(a, ClassPattern) else np.asarray(a, dtype=np.float64)
    vb = b.gamma if isinstance(b, ClassPattern) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ContractError(f"pattern lengths differ: {va.size} vs {vb.size}")
    return int(np.sum((va >= threshold) != (vb >= threshold)))


def pattern_distance_matrix(patterns: Sequence[ClassPattern], threshold: float = THRESHOLD) -> pd.DataFrame:
    ids = [p.class_id for p in patterns]
    matrix = [[pattern_distance(p, q, threshold) for q in patterns] for p in patterns]
    frame = pd.DataFrame(matrix, index=ids, columns=ids)
    frame.index.name = "class"
    return frame


def mean_off_diagonal(matrix: np.ndarray) -> float:
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if n < 2:
        raise ContractError("need at least 2 classes for off-diagonal statistics")
    return float((matrix.sum() - np.trace(matrix)) / (n * (n - 1)))


def class_kl_from_counts(counts: np.ndarray, smoothing: float = 1.0) -> np.ndarray:
    """KL(p_i || p_j) (natural log) between rows of a (classes, words) count matrix after smoothing."""
    counts = np.asarray(counts, dtype=np.float64) + smoothing
    probs = counts / counts.sum(axis=1, keepdims=True)
    n = probs.shape[0]
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                matrix[i, j] = float(np.sum(rel_entr(probs[i], probs[j])))
    return matrix


def class_kl_matrix(corpus: LabeledCorpus, smoothing: float = 1.0) -> ClassKLMatrix:
    """
    Pairwise class KL of add-1 smoothed unigram distributions.

    Words are the non-reserved vocabulary entries; <unk> is not counted.
    """
    if not corpus.labeled:
        raise ContractError("class_kl_matrix needs a labeled corpus")
    if len(corpus.classes) < 2:
        raise ContractError("class_kl_matrix needs at least 2 classes")
    first_word = len(RESERVED_TOKENS)
    size = len(corpus.vocab)
    counts = np.zeros((len(corpus.classes), size - first_word))
    seen = np.zeros(len(corpus.classes), dtype=np.int64)
    index = {c: i for i, c in enumerate(corpus.classes)}
    for ids, label in zip(corpus.sentences, corpus.labels):
        row = index[label]
        seen[row] += 1
        counts[row] += np.bincount(ids, minlength=size)[first_word:]
    for cls, n in zip(corpus.classes, seen):
        if n == 0:
            raise ContractError(f"class '{cls}' has no sentences")
    return ClassKLMatrix(list(corpus.classes), class_kl_from_counts(counts, smoothing), smoothing)


def spearman_link(class_kls: Sequence[float], pattern_distances: Sequence[float]) -> float:
    """Spearman correlation between mean class KL and mean pattern distance across settings."""
    if len(class_kls) != len(pattern_distances) or len(class_kls) < 3:
        raise ContractError("spearman_link needs at least 3 paired settings")
    rho = spearmanr(class_kls, pattern_distances)[0]
    if not np.isfinite(rho):
        logger.warning("Spearman correlation undefined (constant input)")
    return float(rho)


def write_gamma_class_csv(path: str, patterns: Sequence[ClassPattern]) -> None:
    """Header of dimension indices; one row per class with the class id first."""
    dim = patterns[0].gamma.size
    frame = pd.DataFrame([p.gamma for p in patterns], columns=[str(i) for i in range(dim)])
    frame.insert(0, "class", [p.class_id for p in patterns])
    frame.to_csv(path, index=False, float_format="%.6g")


def write_class_kl_csv(path: str, klm: ClassKLMatrix) -> None:
    klm.to_frame().to_csv(path, float_format="%.8g")
