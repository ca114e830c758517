"""
Distributions over latent variables, written against the autodiff Tensor.

Samplers are reparameterized: noise comes from an explicit RngStream (or is
passed in directly for replay) and the returned Tensor is differentiable in
the distribution parameters. Log densities and KL divergences reduce over the
last axis.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist

from . import numerics
from .diffcore import tensor as T
from .diffcore.rng import RngStream
from .diffcore.tensor import Tensor, as_tensor
from .errors import ContractError

logger = logging.getLogger(__name__)

HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)

# Beta samples are kept this far from 0 and 1
BETA_CLAMP = 1e-6
# Uniform noise for the Binary Concrete logit
CONCRETE_CLAMP = 1e-7
# Gate probabilities inside logs
GATE_CLAMP = 1e-6

BETA_METHODS = ("gamma", "inverse_cdf")


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ContractError(message)


@dataclass
class GaussianParams:
    """Diagonal Gaussian N(mean, std^2)."""

    mean: Tensor
    std: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.std = as_tensor(self.std)
        _check(self.mean.shape == self.std.shape,
               f"mean shape {self.mean.shape} does not match std shape {self.std.shape}")
        _check(bool(np.all(self.std.data > 0)), "Gaussian std must be positive")
        _check(bool(np.all(np.isfinite(self.mean.data))), "Gaussian mean must be finite")

    @classmethod
    def standard(cls, shape: Tuple[int, ...]) -> "GaussianParams":
        return cls(Tensor(np.zeros(shape)), Tensor(np.ones(shape)))


@dataclass
class BetaParams:
    alpha: Tensor
    beta: Tensor

    def __post_init__(self):
        self.alpha = as_tensor(self.alpha)
        self.beta = as_tensor(self.beta)
        _check(self.alpha.shape == self.beta.shape,
               f"alpha shape {self.alpha.shape} does not match beta shape {self.beta.shape}")
        _check(bool(np.all(self.alpha.data > 0) and np.all(self.beta.data > 0)),
               "Beta parameters must be positive")

    @classmethod
    def constant(cls, alpha: float, beta: float, shape: Tuple[int, ...]) -> "BetaParams":
        return cls(Tensor(np.full(shape, alpha)), Tensor(np.full(shape, beta)))

    def mean(self) -> Tensor:
        return self.alpha / (self.alpha + self.beta)


@dataclass
class BinaryConcreteParams:
    """Relaxed Bernoulli with probability `gate` and temperature."""

    gate: Tensor
    temperature: float

    def __post_init__(self):
        self.gate = as_tensor(self.gate)
        _check(bool(np.all((self.gate.data > 0) & (self.gate.data < 1))),
               "Binary Concrete gate must lie strictly inside (0, 1)")
        _check(self.temperature > 0, f"temperature must be positive, got {self.temperature}")


@dataclass
class SpikeSlabParams:
    """
    Per-dimension mixture (1 - gate) * slab + gate * N(0, spike_std^2).

    gate is the probability of the spike, i.e. of the dimension being off.
    """

    gate: Tensor
    slab: GaussianParams
    spike_std: float

    def __post_init__(self):
        self.gate = as_tensor(self.gate)
        _check(bool(np.all((self.gate.data >= 0) & (self.gate.data <= 1))), "gate must lie in [0, 1]")
        _check(self.spike_std > 0, f"spike_std must be positive, got {self.spike_std}")
        _check(self.gate.shape == self.slab.mean.shape,
               f"gate shape {self.gate.shape} does not match slab shape {self.slab.mean.shape}")


@dataclass
class BetaSample:
    value: Tensor
    clamped: int = 0


# Gaussian

def gaussian_sample(params: GaussianParams, rng: Optional[RngStream],
                    noise: Optional[np.ndarray] = None) -> Tensor:
    """z = mean + std * eps with eps ~ N(0, 1)."""
    eps = rng.normal(params.mean.shape) if noise is None else np.asarray(noise)
    return params.mean + params.std * eps.astype(params.mean.dtype)


def gaussian_log_prob(z: Tensor, params: GaussianParams) -> Tensor:
    return gaussian_log_prob_terms(z, params).sum(axis=-1)


def gaussian_log_prob_terms(z: Tensor, params: GaussianParams) -> Tensor:
    scaled = (as_tensor(z) - params.mean) / params.std
    return -0.5 * T.square(scaled) - T.log(params.std) - HALF_LOG_TWO_PI


def gaussian_kl_terms(q: GaussianParams, p: GaussianParams) -> Tensor:
    """Elementwise KL(q || p); identical arguments give exactly 0."""
    var_q = T.square(q.std)
    var_p = T.square(p.std)
    return (T.log(p.std) - T.log(q.std)
            + (var_q + T.square(q.mean - p.mean)) / (2.0 * var_p) - 0.5)


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> Tensor:
    return gaussian_kl_terms(q, p).sum(axis=-1)


# Beta

def _log_beta_fn(alpha: Tensor, beta: Tensor) -> Tensor:
    return T.log_gamma(alpha) + T.log_gamma(beta) - T.log_gamma(alpha + beta)


def beta_log_prob(x: Tensor, params: BetaParams) -> Tensor:
    x = as_tensor(x)
    return ((params.alpha - 1.0) * T.log(x) + (params.beta - 1.0) * T.log(1.0 - x)
            - _log_beta_fn(params.alpha, params.beta)).sum(axis=-1)


def beta_kl(q: BetaParams, p: BetaParams) -> Tensor:
    """Closed-form KL(Beta(a_q, b_q) || Beta(a_p, b_p)) summed over the last axis."""
    a_q, b_q, a_p, b_p = q.alpha, q.beta, p.alpha, p.beta
    terms = (_log_beta_fn(a_p, b_p) - _log_beta_fn(a_q, b_q)
             + (a_q - a_p) * T.digamma(a_q)
             + (b_q - b_p) * T.digamma(b_q)
             + (a_p - a_q + b_p - b_q) * T.digamma(a_q + b_q))
    return terms.sum(axis=-1)


def beta_sample_pathwise(params: BetaParams, rng: Optional[RngStream], method: str = "gamma",
                         noise: Optional[np.ndarray] = None) -> BetaSample:
    """
    Reparameterized Beta draw with implicit gradients.

    `gamma` draws X ~ Gamma(alpha), Y ~ Gamma(beta) and returns X / (X + Y);
    `inverse_cdf` pushes a uniform draw (or `noise`) through beta_ppf. Either
    way the gradient is the implicit one

        dz/d(alpha) = -(dI_z/d(alpha)) / pdf(z)

    with dI/d(alpha) from central differences at 64-bit. Samples are clamped
    to [BETA_CLAMP, 1 - BETA_CLAMP]; clamped entries carry zero gradient.
    """
    if method not in BETA_METHODS:
        raise ContractError(f"unknown Beta sampling method '{method}', expected one of {BETA_METHODS}")
    alpha = params.alpha.data.astype(np.float64)
    beta = params.beta.data.astype(np.float64)
    if method == "gamma":
        if noise is not None:
            raise ContractError("fixed noise is only supported by the inverse_cdf method")
        x = rng.gamma(alpha)
        y = rng.gamma(beta)
        with np.errstate(invalid="ignore", divide="ignore"):
            raw = x / (x + y)
        # both gamma draws can underflow to 0 for tiny shapes
        raw = np.where(np.isfinite(raw), raw, np.where(alpha >= beta, 1.0, 0.0))
    else:
        u = rng.uniform(alpha.shape) if noise is None else np.asarray(noise, dtype=np.float64)
        raw = np.asarray(numerics.beta_ppf(u, alpha, beta), dtype=np.float64).reshape(alpha.shape)

    z = np.clip(raw, BETA_CLAMP, 1.0 - BETA_CLAMP)
    clamped_mask = z != raw
    clamped = int(clamped_mask.sum())
    if clamped:
        logger.debug(f"Beta sampler clamped {clamped} of {z.size} draws")

    value = z.astype(params.alpha.dtype)
    if not (params.alpha.requires_grad or params.beta.requires_grad):
        return BetaSample(Tensor(value, dtype=value.dtype), clamped)

    d_alpha, d_beta = numerics.reg_inc_beta_grad(z, alpha, beta)
    pdf = np.exp(np.asarray(numerics.beta_log_pdf(z, alpha, beta)))
    dz_da = np.where(clamped_mask, 0.0, -np.asarray(d_alpha) / pdf)
    dz_db = np.where(clamped_mask, 0.0, -np.asarray(d_beta) / pdf)

    def vjp(g):
        return g * dz_da, g * dz_db

    out = T.custom(value, (params.alpha, params.beta), vjp, "beta_sample")
    return BetaSample(out, clamped)


# Binary Concrete and Spike-and-Slab

def _concrete_uniform(rng: Optional[RngStream], shape, noise: Optional[np.ndarray]) -> np.ndarray:
    u = rng.uniform(shape) if noise is None else np.asarray(noise, dtype=np.float64)
    return np.clip(u, CONCRETE_CLAMP, 1.0 - CONCRETE_CLAMP)


def _relaxed_gate(gate: Tensor, u: np.ndarray, temperature: float) -> Tensor:
    logit_u = (np.log(u) - np.log1p(-u)).astype(gate.dtype)
    return T.sigmoid((T.log(gate) - T.log(1.0 - gate) + logit_u) / temperature)


def binary_concrete_sample(params: BinaryConcreteParams, rng: Optional[RngStream],
                           noise: Optional[np.ndarray] = None) -> Tensor:
    """b = sigmoid((logit(gate) + logit(u)) / temperature), u ~ U(0, 1)."""
    u = _concrete_uniform(rng, params.gate.shape, noise)
    return _relaxed_gate(params.gate, u, params.temperature)


SpikeSlabNoise = Tuple[np.ndarray, np.ndarray, np.ndarray]


def spike_slab_sample(params: SpikeSlabParams, temperature: float, rng: Optional[RngStream],
                      hard: bool = False, noise: Optional[SpikeSlabNoise] = None) -> Tensor:
    """
    z = (1 - b) * (mu + sigma * eps) + b * spike_std * eta.

    b is a relaxed spike indicator. With `hard` (or where the gate is exactly
    0 or 1) b is the Bernoulli indicator u > 1 - gate instead. Noise is drawn
    in the order u, eps, eta.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    shape = params.gate.shape
    if noise is None:
        u = _concrete_uniform(rng, shape, None)
        eps = rng.normal(shape)
        eta = rng.normal(shape)
    else:
        u, eps, eta = noise
        u = np.clip(np.asarray(u, dtype=np.float64), CONCRETE_CLAMP, 1.0 - CONCRETE_CLAMP)
    dtype = params.slab.mean.dtype
    gate = params.gate
    hard_gate = (u > 1.0 - gate.data).astype(dtype)

    if hard:
        b: Union[Tensor, np.ndarray] = hard_gate
    else:
        interior = ((gate.data > 0) & (gate.data < 1)).astype(dtype)
        soft = _relaxed_gate(T.clip(gate, GATE_CLAMP, 1.0 - GATE_CLAMP), u, temperature)
        b = soft * interior + hard_gate * (1.0 - interior)

    slab = gaussian_sample(params.slab, None, noise=eps)
    spike = (params.spike_std * np.asarray(eta)).astype(dtype)
    return slab + b * (spike - slab)


def spike_slab_log_prob(z: Tensor, params: SpikeSlabParams) -> Tensor:
    """log[(1 - gate) N(z; mu, sigma) + gate N(z; 0, spike_std)] summed over dims."""
    z = as_tensor(z)
    dtype = params.slab.mean.dtype
    log_slab = gaussian_log_prob_terms(z, params.slab)
    spike = GaussianParams(Tensor(np.zeros(z.shape), dtype=dtype),
                           Tensor(np.full(z.shape, params.spike_std), dtype=dtype))
    log_spike = gaussian_log_prob_terms(z, spike)
    gate = T.clip(params.gate, GATE_CLAMP, 1.0 - GATE_CLAMP)
    mixture = T.logaddexp(T.log(1.0 - gate) + log_slab, T.log(gate) + log_spike)
    off = (params.gate.data == 1).astype(dtype)
    on = (params.gate.data == 0).astype(dtype)
    interior = 1.0 - off - on
    return (mixture * interior + log_slab * on + log_spike * off).sum(axis=-1)


def spike_slab_kl(q: SpikeSlabParams, p: SpikeSlabParams) -> Tensor:
    """
    Paired-component bound on KL(q || p) for mixtures sharing one gate.

    sum_i (1 - gate_i) * KL(q.slab_i || p.slab_i); the spike-vs-spike term is
    zero. This upper-bounds the exact mixture KL.
    """
    if q.gate is not p.gate and not np.array_equal(q.gate.data, p.gate.data):
        raise ContractError("spike_slab_kl requires posterior and prior to share the same gate")
    if q.spike_std != p.spike_std:
        raise ContractError(f"spike_std differs: {q.spike_std} vs {p.spike_std}")
    return ((1.0 - q.gate) * gaussian_kl_terms(q.slab, p.slab)).sum(axis=-1)


def spike_slab_kl_mc(z: Tensor, q: SpikeSlabParams, p: SpikeSlabParams) -> Tensor:
    """Single-sample estimate log q(z) - log p(z) at a draw z ~ q."""
    return spike_slab_log_prob(z, q) - spike_slab_log_prob(z, p)


# Maximum mean discrepancy

def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled samples (1.0 if degenerate)."""
    pooled = np.concatenate([np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)])
    if pooled.shape[0] < 2:
        return 1.0
    median = float(np.median(pdist(pooled)))
    return median if np.isfinite(median) and median > 0 else 1.0


def _rbf(a: Tensor, b: Tensor, bandwidth: float) -> Tensor:
    sq_a = T.square(a).sum(axis=1, keepdims=True)
    sq_b = T.square(b).sum(axis=1, keepdims=True)
    dist = T.clip(sq_a + T.transpose(sq_b) - 2.0 * T.matmul(a, T.transpose(b)), 0.0, None)
    return T.exp(-dist / (2.0 * bandwidth * bandwidth))


def mmd(samples_q: Tensor, samples_p: Tensor, bandwidth: Optional[float] = None) -> Tensor:
    """
    Biased (V-statistic) squared MMD with an RBF kernel.

    Args:
        samples_q: (n, D) samples
        samples_p: (m, D) samples
        bandwidth: Kernel length scale; median heuristic when None

    Returns:
        Scalar Tensor, >= 0
    """
    x, y = as_tensor(samples_q), as_tensor(samples_p)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ContractError(f"mmd needs (n, D) and (m, D) samples, got {x.shape} and {y.shape}")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ContractError("mmd needs non-empty sample sets")
    if bandwidth is None:
        bandwidth = median_bandwidth(x.data, y.data)
    if bandwidth <= 0:
        raise ContractError(f"bandwidth must be positive, got {bandwidth}")
    value = _rbf(x, x, bandwidth).mean() + _rbf(y, y, bandwidth).mean() - 2.0 * _rbf(x, y, bandwidth).mean()
    return T.clip(value, 0.0, None)
