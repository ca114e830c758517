"""
Corpus ingestion, cleaning, vocabularies, batching and synthetic corpora.

Corpus files are UTF-8, one record per line: `label<TAB>sentence`, or just the
sentence for unlabeled corpora. Vocab files list one token per line; the
token on line i (0-based) has id i + 3, after the reserved ids.
"""

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from .config import SynthSpec
from .diffcore.rng import RngStream
from .errors import ContractError

logger = logging.getLogger(__name__)

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
RESERVED_TOKENS = ("<pad>", "<eos>", "<unk>")

MAX_LENGTH = 200
DEFAULT_VOCAB_CAP = 20000

_HYPERLINK = re.compile(r"(?:https?://|ftp://|www\.)\S+", re.IGNORECASE)
# straight and curly double quotes
_QUOTES = re.compile("[\"“”„‟]")


@dataclass
class PreprocessResult:
    """Cleaned token lists (labels kept aligned) with drop/truncation counts."""

    sentences: List[List[str]]
    labels: Optional[List[str]] = None
    dropped: int = 0
    truncated: int = 0


def clean_line(line: str) -> List[str]:
    """Remove hyperlinks, double quotes and non-ASCII characters; lowercase and split."""
    text = _HYPERLINK.sub(" ", line)
    text = _QUOTES.sub("", text)
    text = text.encode("ascii", errors="ignore").decode("ascii")
    return text.lower().split()


def preprocess(lines: Iterable[str], labels: Optional[Sequence[str]] = None,
               max_length: int = MAX_LENGTH, pretokenized: bool = False) -> PreprocessResult:
    """
    Clean raw lines into token lists.

    Args:
        lines: Raw sentences
        labels: Optional labels aligned with lines
        max_length: Sentences longer than this are truncated
        pretokenized: Lines are already cleaned; only split on whitespace

    Returns:
        PreprocessResult; empty lines are dropped together with their labels
    """
    lines = list(lines)
    if labels is not None and len(labels) != len(lines):
        raise ContractError(f"{len(labels)} labels for {len(lines)} lines")
    result = PreprocessResult(sentences=[], labels=[] if labels is not None else None)
    for i, line in enumerate(lines):
        tokens = line.split() if pretokenized else clean_line(line)
        if not tokens:
            result.dropped += 1
            continue
        if len(tokens) > max_length:
            tokens = tokens[:max_length]
            result.truncated += 1
        result.sentences.append(tokens)
        if labels is not None:
            result.labels.append(labels[i])
    if result.dropped:
        logger.warning(f"Dropped {result.dropped} lines that were empty after cleaning")
    if result.truncated:
        logger.warning(f"Truncated {result.truncated} sentences to {max_length} tokens")
    return result


class Vocab:
    """Token <-> id map with reserved ids 0 (<pad>), 1 (<eos>), 2 (<unk>)."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: List[str] = list(RESERVED_TOKENS)
        self.token_to_id: Dict[str, int] = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
        for tok in tokens:
            if tok in self.token_to_id:
                raise ContractError(f"duplicate or reserved vocab token '{tok}'")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def words(self) -> List[str]:
        return self.id_to_token[len(RESERVED_TOKENS):]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.token_to_id.get(t, UNK_ID) for t in tokens], dtype=np.int64)

    def count_unknown(self, tokens: Sequence[str]) -> int:
        return sum(1 for t in tokens if t not in self.token_to_id)

    def encode_many(self, token_lists: Iterable[Sequence[str]]) -> Tuple[List[np.ndarray], int]:
        """Encode sentences; also return how many tokens became <unk>."""
        encoded, unknown = [], 0
        for tokens in token_lists:
            encoded.append(self.encode(tokens))
            unknown += self.count_unknown(tokens)
        if unknown:
            logger.info(f"{unknown} tokens mapped to <unk>")
        return encoded, unknown

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Tokens up to the first <eos>; <pad> is skipped."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i == PAD_ID:
                continue
            if not 0 <= i < len(self):
                raise ContractError(f"token id {i} out of range for vocab of size {len(self)}")
            out.append(self.id_to_token[i])
        return out

    def save(self, path: str) -> None:
        Path(path).write_text("".join(f"{tok}\n" for tok in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        file_path = Path(path)
        if not file_path.is_file():
            raise ContractError(f"vocab file not found: {path}")
        return cls([line for line in file_path.read_text(encoding="utf-8").split("\n") if line])


def build_vocab(token_lists: Iterable[Sequence[str]], cap: int = DEFAULT_VOCAB_CAP) -> Vocab:
    """Keep the `cap` most frequent tokens; ties go to the lexicographically smaller token."""
    counts: Counter = Counter()
    for tokens in token_lists:
        counts.update(tokens)
    for tok in RESERVED_TOKENS:
        counts.pop(tok, None)
    if not counts:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[:cap]]
    logger.info(f"Vocabulary: {len(kept)} of {len(counts)} distinct tokens kept (cap {cap})")
    return Vocab(kept)


@dataclass
class LabeledCorpus:
    """Integer-encoded sentences (no <eos>) with optional aligned labels."""

    sentences: List[np.ndarray]
    labels: Optional[List[str]]
    vocab: Vocab
    classes: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.sentences):
            raise ContractError(f"{len(self.labels)} labels for {len(self.sentences)} sentences")
        size = len(self.vocab)
        for i, ids in enumerate(self.sentences):
            if ids.size and (ids.min() < 0 or ids.max() >= size):
                raise ContractError(f"sentence {i} has a token id outside the vocabulary of size {size}")
        if self.labels is not None and not self.classes:
            self.classes = sorted(set(self.labels))

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def label_ids(self) -> np.ndarray:
        """Labels as indices into `classes`."""
        if self.labels is None:
            raise ContractError("corpus has no labels")
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[label] for label in self.labels], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "LabeledCorpus":
        labels = [self.labels[i] for i in indices] if self.labels is not None else None
        return LabeledCorpus([self.sentences[i] for i in indices], labels, self.vocab, list(self.classes))

    def with_labels(self, labels: List[str]) -> "LabeledCorpus":
        return LabeledCorpus(list(self.sentences), labels, self.vocab)

    def tokens(self) -> List[List[str]]:
        return [[self.vocab.id_to_token[int(i)] for i in ids] for ids in self.sentences]


def encode_corpus(result: PreprocessResult, vocab: Vocab) -> LabeledCorpus:
    sentences, _ = vocab.encode_many(result.sentences)
    return LabeledCorpus(sentences, result.labels, vocab)


# File I/O

def read_corpus_file(path: str, labeled: bool = True) -> Tuple[List[str], Optional[List[str]]]:
    """Read `label<TAB>sentence` (or bare sentence) records."""
    file_path = Path(path)
    if not file_path.is_file():
        raise ContractError(f"corpus file not found: {path}")
    lines, labels = [], [] if labeled else None
    with open(file_path, "r", encoding="utf-8", errors="replace") as f:
        for number, raw in enumerate(f, start=1):
            raw = raw.rstrip("\n").rstrip("\r")
            if labeled:
                label, sep, sentence = raw.partition("\t")
                if not sep:
                    raise ContractError(f"{path}:{number}: expected 'label<TAB>sentence'")
                labels.append(label.strip())
                lines.append(sentence)
            else:
                lines.append(raw)
    return lines, labels


def write_corpus_file(path: str, token_lists: Sequence[Sequence[str]],
                      labels: Optional[Sequence[str]] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, tokens in enumerate(token_lists):
            sentence = " ".join(tokens)
            f.write(f"{labels[i]}\t{sentence}\n" if labels is not None else f"{sentence}\n")


def load_corpus(path: str, vocab: Optional[Vocab] = None, labeled: bool = True,
                vocab_cap: int = DEFAULT_VOCAB_CAP, max_length: int = MAX_LENGTH,
                pretokenized: bool = True) -> LabeledCorpus:
    """
    Read a corpus file and encode it.

    Files written by the preprocess and synth subcommands are already cleaned,
    hence pretokenized defaults to True here.
    """
    lines, labels = read_corpus_file(path, labeled=labeled)
    result = preprocess(lines, labels, max_length=max_length, pretokenized=pretokenized)
    if vocab is None:
        vocab = build_vocab(result.sentences, cap=vocab_cap)
    return encode_corpus(result, vocab)


# Splits

class Splits(NamedTuple):
    train: LabeledCorpus
    dev: LabeledCorpus
    test: LabeledCorpus
    manifest: List[Dict[str, object]]


def split_per_class(corpus: LabeledCorpus, train_n: int = 10000, eval_n: int = 1000,
                    seed: int = 0) -> Splits:
    """
    Sample disjoint per-class train/dev/test subsets.

    Each class contributes train_n training sentences and eval_n dev and test
    sentences. Classes are visited in sorted order, each shuffled with the
    same derived stream, so a seed fixes the split.
    """
    if not corpus.labeled:
        raise ContractError("split_per_class needs a labeled corpus")
    need = train_n + 2 * eval_n
    by_class: Dict[str, List[int]] = {c: [] for c in corpus.classes}
    for i, label in enumerate(corpus.labels):
        by_class[label].append(i)
    for cls, members in by_class.items():
        if len(members) < need:
            raise ContractError(f"class '{cls}' has {len(members)} sentences, needs {need}")

    rng = RngStream(seed).derive("split")
    parts: Dict[str, List[int]] = {"train": [], "dev": [], "test": []}
    manifest: List[Dict[str, object]] = []
    for cls in corpus.classes:
        members = np.array(by_class[cls])
        order = members[rng.permutation(len(members))]
        chosen = {
            "train": order[:train_n],
            "dev": order[train_n:train_n + eval_n],
            "test": order[train_n + eval_n:need],
        }
        for split, idx in chosen.items():
            idx = sorted(int(i) for i in idx)
            parts[split].extend(idx)
            manifest.extend({"split": split, "class": cls, "line_index": i} for i in idx)
    logger.info(f"Split {len(corpus.classes)} classes: {train_n}/{eval_n}/{eval_n} per class")
    return Splits(corpus.subset(parts["train"]), corpus.subset(parts["dev"]),
                  corpus.subset(parts["test"]), manifest)


def write_jsonl(path: str, records: Iterable[Dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str) -> List[Dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# Synthetic corpora

def _zipf(n: int) -> np.ndarray:
    weights = 1.0 / np.arange(1, n + 1)
    return weights / weights.sum()


def synth_generate(spec: SynthSpec, rng: Optional[RngStream] = None) -> LabeledCorpus:
    """
    Generate a labeled corpus from per-class unigram mixtures.

    Each token of a class-c sentence comes from the shared vocabulary with
    probability shared_fraction and from class c's exclusive vocabulary
    otherwise; both use Zipf weights. Class tokens are named "c{c}w{i}",
    shared tokens "s{i}", labels "class{c}".
    """
    rng = rng or RngStream(spec.seed).derive("synth")
    class_p = _zipf(spec.class_vocab_size)
    shared_p = _zipf(spec.shared_vocab_size) if spec.shared_vocab_size else None

    token_lists: List[List[str]] = []
    labels: List[str] = []
    for c in range(spec.num_classes):
        for _ in range(spec.sentences_per_class):
            length = int(rng.integers(spec.min_length, spec.max_length + 1, size=1)[0])
            from_shared = rng.uniform(length) < spec.shared_fraction
            own = rng.choice(spec.class_vocab_size, size=length, p=class_p)
            shared = rng.choice(spec.shared_vocab_size, size=length, p=shared_p) if shared_p is not None else None
            tokens = [
                f"s{shared[k]}" if from_shared[k] else f"c{c}w{own[k]}"
                for k in range(length)
            ]
            token_lists.append(tokens)
            labels.append(f"class{c}")

    vocab = build_vocab(token_lists, cap=len(set(t for s in token_lists for t in s)))
    sentences, _ = vocab.encode_many(token_lists)
    logger.info(f"Generated {len(sentences)} sentences over {len(vocab)} vocab entries")
    return LabeledCorpus(sentences, labels, vocab)


# Batching

@dataclass
class Batch:
    """
    Padded mini-batch.

    Encoder reads the tokens; the decoder reads <eos> + tokens (the <eos> id
    doubles as the start symbol) and predicts tokens + <eos>.
    """

    encoder_ids: np.ndarray
    encoder_mask: np.ndarray
    decoder_inputs: np.ndarray
    targets: np.ndarray
    target_mask: np.ndarray
    labels: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.encoder_ids.shape[0]


def make_batch(sentences: Sequence[np.ndarray], labels: Optional[np.ndarray] = None) -> Batch:
    if not sentences:
        raise ContractError("cannot batch zero sentences")
    lengths = np.array([len(s) for s in sentences])
    if np.any(lengths == 0):
        raise ContractError("sentences must be non-empty")
    batch, width = len(sentences), int(lengths.max())
    enc = np.full((batch, width), PAD_ID, dtype=np.int64)
    dec_in = np.full((batch, width + 1), PAD_ID, dtype=np.int64)
    targets = np.full((batch, width + 1), PAD_ID, dtype=np.int64)
    for i, ids in enumerate(sentences):
        n = len(ids)
        enc[i, :n] = ids
        dec_in[i, 0] = EOS_ID
        dec_in[i, 1:n + 1] = ids
        targets[i, :n] = ids
        targets[i, n] = EOS_ID
    steps = np.arange(width + 1)[None, :]
    return Batch(
        encoder_ids=enc,
        encoder_mask=(steps[:, :width] < lengths[:, None]).astype(np.float64),
        decoder_inputs=dec_in,
        targets=targets,
        target_mask=(steps <= lengths[:, None]).astype(np.float64),
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
    )


def batch_indices(n: int, batch_size: int, rng: Optional[RngStream] = None,
                  min_size: int = 1) -> List[np.ndarray]:
    """
    Index chunks in corpus order, or in a seeded shuffled order when rng is given.

    A trailing chunk smaller than min_size is merged into the one before it.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be positive, got {batch_size}")
    order = np.arange(n) if rng is None else rng.permutation(n)
    chunks = [order[start:start + batch_size] for start in range(0, n, batch_size)]
    if len(chunks) >= 2 and len(chunks[-1]) < min_size:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


# Statistics

class CorpusStats(BaseModel):
    """Sentence/vocabulary statistics; vocab_size excludes <pad> and <eos>."""

    sentences: int
    vocab_size: int
    min_length: int
    avg_length: float
    max_length: int
    num_classes: int
    per_class: Dict[str, int]


def corpus_stats(corpus: LabeledCorpus) -> CorpusStats:
    if not len(corpus):
        raise ContractError("corpus is empty")
    lengths = np.array([len(s) for s in corpus.sentences])
    per_class = dict(sorted(Counter(corpus.labels).items())) if corpus.labeled else {}
    return CorpusStats(
        sentences=len(corpus),
        vocab_size=len(corpus.vocab) - 2,
        min_length=int(lengths.min()),
        avg_length=round(float(lengths.mean()), 2),
        max_length=int(lengths.max()),
        num_classes=len(corpus.classes),
        per_class=per_class,
    )
