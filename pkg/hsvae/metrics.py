"""
Sparsity metrics: Hoyer per code and Average Hoyer over a corpus.

Average Hoyer divides every code elementwise by the per-dimension population
standard deviation over the corpus before measuring, so that a dimension
with a small overall scale does not look "off".
"""

import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .diffcore.rng import RngStream
from .errors import ContractError
from .model.network import TextVAE
from .textdata import LabeledCorpus, batch_indices, make_batch

logger = logging.getLogger(__name__)

Mode = Literal["posterior-mean", "posterior-sample"]
MODES = ("posterior-mean", "posterior-sample")

# Dimensions with a smaller std are left unnormalized
STD_FLOOR = 1e-8


class HoyerReport(BaseModel):
    average_hoyer: float
    std: List[float]
    mode: Mode
    skipped_codes: int = 0
    degenerate_dims: int = 0
    num_codes: int = 0


class ReconstructionReport(BaseModel):
    variant: str
    checkpoint: str
    split: str
    sentences: int
    reconstruction: float
    kl_z: float
    kl_gamma: float
    objective: float


def hoyer(code: np.ndarray) -> float:
    """
    (sqrt(d) - |z|_1 / |z|_2) / (sqrt(d) - 1), in [0, 1].

    1 for a one-hot code, 0 for a constant one. The all-zero code is 0/0 and
    is defined as 0.
    """
    z = np.asarray(code, dtype=np.float64).reshape(-1)
    if z.size < 2:
        raise ContractError(f"hoyer needs at least 2 dimensions, got {z.size}")
    if not np.all(np.isfinite(z)):
        raise ContractError("hoyer needs a finite code")
    return float(hoyer_rows(z[None, :])[0])


def hoyer_rows(codes: np.ndarray) -> np.ndarray:
    """Row-wise hoyer of an (N, D) matrix; zero rows give 0."""
    codes = np.asarray(codes, dtype=np.float64)
    d = codes.shape[1]
    l1 = np.abs(codes).sum(axis=1)
    l2 = np.sqrt(np.square(codes).sum(axis=1))
    root = np.sqrt(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = (root - l1 / l2) / (root - 1.0)
    return np.clip(np.where(l2 > 0, value, 0.0), 0.0, 1.0)


def average_hoyer_from_codes(codes: np.ndarray, mode: Mode = "posterior-mean") -> HoyerReport:
    """
    Average Hoyer of a code matrix (one row per sentence).

    Args:
        codes: (N, D) codes, D >= 2
        mode: How the codes were obtained (recorded in the report)

    Returns:
        HoyerReport with the per-dimension std used for normalization
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise ContractError(f"codes must be a non-empty (N, D) matrix, got shape {codes.shape}")
    if codes.shape[1] < 2:
        raise ContractError(f"hoyer needs at least 2 dimensions, got {codes.shape[1]}")
    if not np.all(np.isfinite(codes)):
        raise ContractError("codes must be finite")
    if mode not in MODES:
        raise ContractError(f"unknown mode '{mode}', expected one of {MODES}")

    std = codes.std(axis=0)
    degenerate = std < STD_FLOOR
    if np.any(degenerate):
        logger.warning(f"{int(degenerate.sum())} dimensions have std < {STD_FLOOR}; left unnormalized")
    scale = np.where(degenerate, 1.0, std)
    normalized = codes / scale
    zero_rows = int(np.sum(~np.any(normalized != 0, axis=1)))
    if zero_rows:
        logger.warning(f"{zero_rows} all-zero codes counted as hoyer 0")
    return HoyerReport(
        average_hoyer=float(np.mean(hoyer_rows(normalized))),
        std=[float(s) for s in std],
        mode=mode,
        skipped_codes=zero_rows,
        degenerate_dims=int(degenerate.sum()),
        num_codes=int(codes.shape[0]),
    )


def extract_codes(corpus: LabeledCorpus, model: TextVAE, mode: Mode = "posterior-mean",
                  rng: Optional[RngStream] = None, batch_size: int = 64) -> np.ndarray:
    """One code per sentence, in corpus order."""
    if not len(corpus):
        raise ContractError("corpus is empty")
    if mode == "posterior-sample" and rng is None:
        raise ContractError("posterior-sample mode needs an RngStream")
    rows = []
    for idx in batch_indices(len(corpus), batch_size):
        batch = make_batch([corpus.sentences[i] for i in idx])
        if mode == "posterior-mean":
            rows.append(model.posterior_mean_codes(batch))
        else:
            rows.append(model.posterior_sample_codes(batch, rng))
    return np.concatenate(rows, axis=0)


def average_hoyer(corpus: LabeledCorpus, model: TextVAE, mode: Mode = "posterior-mean",
                  rng: Optional[RngStream] = None, batch_size: int = 64) -> Tuple[HoyerReport, np.ndarray]:
    """Average Hoyer of the model's codes over a corpus; also returns the code matrix."""
    codes = extract_codes(corpus, model, mode, rng, batch_size)
    report = average_hoyer_from_codes(codes, mode)
    logger.info(f"Average Hoyer ({mode}): {report.average_hoyer:.4f} over {report.num_codes} codes")
    return report, codes


def write_codes_csv(path: str, codes: np.ndarray) -> None:
    """Code matrix as CSV: header of dimension indices, one row per sentence."""
    frame = pd.DataFrame(np.asarray(codes), columns=[str(i) for i in range(codes.shape[1])])
    frame.to_csv(path, index=False, float_format="%.8g")


def read_codes_csv(path: str) -> np.ndarray:
    if not Path(path).is_file():
        raise ContractError(f"codes file not found: {path}")
    return pd.read_csv(path).to_numpy(dtype=np.float64)
