"""
Training objectives.

Each objective returns ElboTerms averaged over the batch. Reconstruction is a
log-likelihood (maximized); the objective is

    reconstruction - psi * kl_z - lambda * (kl_gamma + mmd) - penalty

The three HSVAE components are computed by three separate functions
(reconstruction_term, latent_kl_term, gate_kl_term) and combined by assemble.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..config import ModelConfig, Variant
from ..diffcore import tensor as T
from ..diffcore.rng import RngStream
from ..diffcore.tensor import Tensor
from ..distributions import (
    BetaParams,
    GaussianParams,
    SpikeSlabParams,
    beta_kl,
    gaussian_kl,
    gaussian_log_prob,
    gaussian_sample,
    mmd,
    spike_slab_kl,
    spike_slab_kl_mc,
    spike_slab_log_prob,
    spike_slab_sample,
)
from ..errors import ContractError
from ..textdata import Batch
from .network import TextVAE

logger = logging.getLogger(__name__)


@dataclass
class ElboTerms:
    """Batch-mean objective components (scalar Tensors)."""

    reconstruction: Tensor
    kl_z: Tensor
    kl_gamma: Tensor
    penalty: Tensor
    objective: Tensor
    mmd: Tensor
    gate_mean: Optional[float] = None
    clamped: int = 0

    def values(self) -> Dict[str, float]:
        out = {
            "reconstruction": self.reconstruction.item(),
            "kl_z": self.kl_z.item(),
            "kl_gamma": self.kl_gamma.item(),
            "penalty": self.penalty.item(),
            "mmd": self.mmd.item(),
            "objective": self.objective.item(),
        }
        if self.gate_mean is not None:
            out["gate_mean"] = self.gate_mean
        return out


def _zero() -> Tensor:
    return Tensor(0.0)


def reconstruction_loglik(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """
    Per-sentence sum of log p(target token) over non-pad positions.

    Args:
        logits: (B, S, V)
        targets: (B, S) token ids (the final real position holds <eos>)
        mask: (B, S) 1 for real positions, 0 for padding

    Returns:
        (B,) log-likelihoods; padding contributes exactly 0
    """
    B, S, V = logits.shape
    if targets.shape != (B, S) or mask.shape != (B, S):
        raise ContractError(f"targets/mask shape must be ({B}, {S}), got {targets.shape} / {mask.shape}")
    nll = T.softmax_cross_entropy(logits.reshape(B * S, V), targets.reshape(-1), mask.reshape(-1))
    return -nll.reshape(B, S).sum(axis=1)


def reconstruction_term(model: TextVAE, batch: Batch, z: Tensor) -> Tensor:
    """(B,) reconstruction log-likelihood of the batch given codes z."""
    return reconstruction_loglik(model.decode(z, batch), batch.targets, batch.target_mask)


def latent_kl_term(q: SpikeSlabParams) -> Tensor:
    """(B,) KL(q(z|x, gamma) || p(z|gamma)) with the N(0, 1) slab prior, paired bound."""
    return spike_slab_kl(q, _slab_prior(q))


def gate_kl_term(q: BetaParams, config: ModelConfig) -> Tensor:
    """(B,) KL(q(gamma|x) || Beta(prior_alpha, prior_beta))."""
    prior = BetaParams.constant(config.prior_alpha, config.prior_beta, q.alpha.shape)
    return beta_kl(q, prior)


def _slab_prior(q: SpikeSlabParams) -> SpikeSlabParams:
    return SpikeSlabParams(q.gate, GaussianParams.standard(q.gate.shape), q.spike_std)


def posterior_penalty(q: GaussianParams, variant: Variant, weight: float) -> Tensor:
    """(B,) weight * (|mu|_1 + |sigma|_1) for VAE_L1, squared L2 norms for VAE_L2, else 0."""
    if variant is Variant.VAE_L1:
        return weight * (T.abs_(q.mean).sum(axis=-1) + T.abs_(q.std).sum(axis=-1))
    if variant is Variant.VAE_L2:
        return weight * (T.square(q.mean).sum(axis=-1) + T.square(q.std).sum(axis=-1))
    return Tensor(np.zeros(q.mean.shape[:-1]))


def assemble(reconstruction: Tensor, kl_z: Tensor, kl_gamma: Tensor, penalty: Tensor,
             psi: float, lam: float, mmd_term: Optional[Tensor] = None,
             gate_mean: Optional[float] = None, clamped: int = 0) -> ElboTerms:
    """Batch-average per-sentence terms and combine them into the objective."""
    rec, kz, kg, pen = (T.mean(t) for t in (reconstruction, kl_z, kl_gamma, penalty))
    mmd_value = mmd_term if mmd_term is not None else _zero()
    objective = rec - psi * kz - lam * kg - lam * mmd_value - pen
    return ElboTerms(rec, kz, kg, pen, objective, mmd_value, gate_mean, clamped)


def _weights(config: ModelConfig, psi: Optional[float], lam: Optional[float]):
    return (config.psi if psi is None else psi), (config.lam if lam is None else lam)


def hsvae_elbo(model: TextVAE, batch: Batch, rng: RngStream,
               psi: Optional[float] = None, lam: Optional[float] = None) -> ElboTerms:
    """
    Monte Carlo HSVAE objective with mc_gamma gate draws and mc_z codes per gate.

    kl_estimator = "mc" evaluates log q - log p at a separate hard draw from the
    posterior mixture, so its expectation is the exact KL and never exceeds the
    paired bound. The relaxed draws feed the decoder only.

    psi / lam override the configured weights (used by KL annealing).
    """
    config = model.config
    psi, lam = _weights(config, psi, lam)
    feature = model.encode(batch)
    q_beta = model.beta_posterior(feature)
    kl_gamma = gate_kl_term(q_beta, config)

    rec_total: Optional[Tensor] = None
    kl_total: Optional[Tensor] = None
    clamped = 0
    for _ in range(config.mc_gamma):
        post = model.hsvae_posterior_from(feature, q_beta, rng)
        clamped += post.clamped
        prior = _slab_prior(post.slab)
        for _ in range(config.mc_z):
            z = spike_slab_sample(post.slab, config.temperature, rng)
            rec = reconstruction_term(model, batch, z)
            rec_total = rec if rec_total is None else rec_total + rec
            if config.kl_estimator == "mc":
                exact = spike_slab_sample(post.slab, config.temperature, rng, hard=True)
                kl = spike_slab_kl_mc(exact, post.slab, prior) / float(config.mc_z)
                kl_total = kl if kl_total is None else kl_total + kl
        if config.kl_estimator == "paired":
            kl = spike_slab_kl(post.slab, prior)
            kl_total = kl if kl_total is None else kl_total + kl

    rec_mean = rec_total / float(config.mc_gamma * config.mc_z)
    kl_z = kl_total / float(config.mc_gamma)
    penalty = Tensor(np.zeros(batch.size))
    gate_mean = float(np.mean(q_beta.mean().data))
    return assemble(rec_mean, kl_z, kl_gamma, penalty, psi, lam, gate_mean=gate_mean, clamped=clamped)


def vae_elbo(model: TextVAE, batch: Batch, rng: RngStream,
             psi: Optional[float] = None, lam: Optional[float] = None) -> ElboTerms:
    """Gaussian posterior, N(0, 1) prior, optional L1/L2 penalty on (mu, sigma)."""
    config = model.config
    psi, lam = _weights(config, psi, lam)
    q = model.gaussian_posterior(model.encode(batch))
    rec = _gaussian_reconstruction(model, batch, q, rng)
    kl_z = gaussian_kl(q, GaussianParams.standard(q.mean.shape))
    penalty = posterior_penalty(q, config.variant, config.penalty_weight)
    return assemble(rec, kl_z, Tensor(np.zeros(batch.size)), penalty, psi, lam)


def _gaussian_reconstruction(model: TextVAE, batch: Batch, q: GaussianParams,
                             rng: RngStream, codes: Optional[list] = None) -> Tensor:
    total: Optional[Tensor] = None
    for _ in range(model.config.mc_z):
        z = gaussian_sample(q, rng)
        if codes is not None:
            codes.append(z)
        rec = reconstruction_term(model, batch, z)
        total = rec if total is None else total + rec
    return total / float(model.config.mc_z)


def matvae_prior(config: ModelConfig, shape) -> SpikeSlabParams:
    """Spike-and-Slab prior with a fixed spike weight and N(0, 1) slab."""
    return SpikeSlabParams(Tensor(np.full(shape, config.matvae_prior_weight)),
                           GaussianParams.standard(shape), config.spike_std)


def matvae_spike_bound(config: ModelConfig) -> float:
    """-D log(1 - w): the most a spike of weight w can lower log p below the slab term."""
    if config.matvae_prior_weight >= 1.0:
        raise ContractError("matvae_kl = bound needs matvae_prior_weight < 1")
    return -config.latent_dim * float(np.log1p(-config.matvae_prior_weight))


def matvae_objective(model: TextVAE, batch: Batch, rng: RngStream,
                     psi: Optional[float] = None, lam: Optional[float] = None) -> ElboTerms:
    """
    Gaussian posterior against a Spike-and-Slab prior plus an MMD term.

    kl_z depends on matvae_kl:

        bound  KL(q || slab) - D log(1 - w), an upper bound on KL(q || p) since
               p >= (1 - w) slab; never negative
        slab   KL(q || slab), ignoring the spike
        mc     log q(z) - log p(z) at the drawn codes; can be negative

    The MMD compares the batch's posterior codes with as many prior draws.
    """
    if batch.size < 2:
        raise ContractError("matvae_objective needs a batch of at least 2 sentences")
    config = model.config
    psi, lam = _weights(config, psi, lam)
    q = model.gaussian_posterior(model.encode(batch))
    codes: list = []
    rec = _gaussian_reconstruction(model, batch, q, rng, codes)
    prior = matvae_prior(config, q.mean.shape)

    if config.matvae_kl == "mc":
        kl_total: Optional[Tensor] = None
        for z in codes:
            kl = gaussian_log_prob(z, q) - spike_slab_log_prob(z, prior)
            kl_total = kl if kl_total is None else kl_total + kl
        kl_z = kl_total / float(len(codes))
    else:
        kl_z = gaussian_kl(q, GaussianParams.standard(q.mean.shape))
        if config.matvae_kl == "bound":
            kl_z = kl_z + matvae_spike_bound(config)

    prior_codes = spike_slab_sample(prior, config.temperature, rng, hard=True)
    mmd_term = mmd(codes[0], prior_codes, config.mmd_bandwidth)
    penalty = Tensor(np.zeros(batch.size))
    return assemble(rec, kl_z, Tensor(np.zeros(batch.size)), penalty, psi, lam, mmd_term=mmd_term)


def compute_elbo(model: TextVAE, batch: Batch, rng: RngStream,
                 psi: Optional[float] = None, lam: Optional[float] = None) -> ElboTerms:
    """Dispatch on the model variant."""
    if model.variant is Variant.HSVAE:
        return hsvae_elbo(model, batch, rng, psi, lam)
    if model.variant is Variant.MATVAE:
        return matvae_objective(model, batch, rng, psi, lam)
    return vae_elbo(model, batch, rng, psi, lam)
