"""
Encoder, posterior heads and decoder of the model family.

Parameters live in one ParameterStore under three prefixes:

    encoder.*   embedding + GRU (shared by every variant)
    heads.*     posterior heads (Gaussian, or Beta + slab for HSVAE)
    decoder.*   embedding + GRU over [word embedding; z] + output projection
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from ..config import ModelConfig, Variant
from ..diffcore import layers
from ..diffcore import tensor as T
from ..diffcore.params import ParameterStore
from ..diffcore.rng import RngStream
from ..diffcore.tensor import Tensor
from ..distributions import (
    BetaParams,
    GaussianParams,
    SpikeSlabParams,
    beta_sample_pathwise,
    gaussian_sample,
    spike_slab_sample,
)
from ..errors import ContractError
from ..textdata import EOS_ID, Batch, make_batch

logger = logging.getLogger(__name__)

# Positivity floor for softplus outputs
HEAD_FLOOR = 1e-4
# Upper cap on Beta head outputs
BETA_CAP = 1e3


def _inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


@dataclass
class HsvaePosterior:
    """q(gamma|x), the sampled gate, and q(z|x, gamma) for that gate."""

    beta: BetaParams
    gate: Tensor
    slab: SpikeSlabParams
    clamped: int = 0


class TextVAE:
    """
    A sentence VAE of any variant.

    Args:
        config: Model configuration
        vocab_size: Vocabulary size including reserved ids
        store: Existing parameters (e.g. from a checkpoint); initialized from rng otherwise
        rng: Stream used for initialization
    """

    def __init__(self, config: ModelConfig, vocab_size: int,
                 store: Optional[ParameterStore] = None, rng: Optional[RngStream] = None):
        if vocab_size < 4:
            raise ContractError(f"vocab_size must exceed the reserved ids, got {vocab_size}")
        self.config = config
        self.vocab_size = vocab_size
        if store is None:
            store = ParameterStore()
            self._init_params(store, rng or RngStream(0).derive("init"))
        self.store = store

    @property
    def variant(self) -> Variant:
        return self.config.variant

    def _init_params(self, store: ParameterStore, rng: RngStream) -> None:
        c, V = self.config, self.vocab_size
        E, H, D = c.embed_dim, c.hidden_dim, c.latent_dim
        store.add("encoder.embedding", 0.1 * rng.normal((V, E)))
        layers.init_gru(store, "encoder.gru", E, H, rng)
        if c.variant is Variant.HSVAE:
            layers.init_linear(store, "heads.beta.hidden", H, H, rng)
            layers.init_linear(store, "heads.beta.alpha", H, D, rng)
            layers.init_linear(store, "heads.beta.beta", H, D, rng)
            layers.init_linear(store, "heads.slab.hidden", H + D, H, rng)
            layers.init_linear(store, "heads.slab.mean", H, D, rng)
            layers.init_linear(store, "heads.slab.std", H, D, rng)
        else:
            layers.init_linear(store, "heads.gauss.hidden", H, H, rng)
            layers.init_linear(store, "heads.gauss.mean", H, D, rng)
            layers.init_linear(store, "heads.gauss.std", H, D, rng)
        store.add("decoder.embedding", 0.1 * rng.normal((V, E)))
        layers.init_gru(store, "decoder.gru", E + D, H, rng)
        layers.init_linear(store, "decoder.out", H, V, rng)

    @contextmanager
    def no_grad(self) -> Iterator[None]:
        """Evaluate without building gradient graphs."""
        with self.store.frozen(prefixes=("",)):
            yield

    # Encoder

    def encode(self, batch: Batch) -> Tensor:
        """Final GRU state at each sentence's last real token, (B, H)."""
        table = self.store["encoder.embedding"]
        steps = [T.embedding(table, batch.encoder_ids[:, t]) for t in range(batch.encoder_ids.shape[1])]
        final, _ = layers.run_gru(steps, layers.GRUParams.from_store(self.store, "encoder.gru"),
                                  mask=batch.encoder_mask)
        return final

    def encode_tokens(self, ids: np.ndarray) -> Tensor:
        """Feature vector (H,) of a single sentence."""
        ids = np.asarray(ids)
        if ids.size == 0:
            raise ContractError("cannot encode an empty sentence")
        return self.encode(make_batch([ids]))[0]

    # Posterior heads

    def _head(self, name: str, x: Tensor) -> Tensor:
        return T.tanh(layers.linear(self.store, f"heads.{name}.hidden", x))

    def gaussian_posterior(self, feature: Tensor) -> GaussianParams:
        if self.variant is Variant.HSVAE:
            raise ContractError("HSVAE has no Gaussian posterior head")
        h = self._head("gauss", feature)
        mean = layers.linear(self.store, "heads.gauss.mean", h)
        std = T.softplus(layers.linear(self.store, "heads.gauss.std", h)) + HEAD_FLOOR
        return GaussianParams(mean, std)

    def beta_posterior(self, feature: Tensor) -> BetaParams:
        self._require_hsvae()
        h = self._head("beta", feature)
        alpha = T.clip(T.softplus(layers.linear(self.store, "heads.beta.alpha", h)) + HEAD_FLOOR, None, BETA_CAP)
        beta = T.clip(T.softplus(layers.linear(self.store, "heads.beta.beta", h)) + HEAD_FLOOR, None, BETA_CAP)
        return BetaParams(alpha, beta)

    def slab_posterior(self, feature: Tensor, gate: Tensor) -> GaussianParams:
        """q(z | x, gamma): the slab head reads [feature; gamma]."""
        self._require_hsvae()
        h = self._head("slab", T.concat([feature, gate], axis=-1))
        mean = layers.linear(self.store, "heads.slab.mean", h)
        std = T.softplus(layers.linear(self.store, "heads.slab.std", h)) + HEAD_FLOOR
        return GaussianParams(mean, std)

    def hsvae_posterior(self, feature: Tensor, rng: RngStream,
                        noise: Optional[np.ndarray] = None) -> HsvaePosterior:
        return self.hsvae_posterior_from(feature, self.beta_posterior(feature), rng, noise)

    def hsvae_posterior_from(self, feature: Tensor, q_beta: BetaParams, rng: RngStream,
                             noise: Optional[np.ndarray] = None) -> HsvaePosterior:
        """Draw a gate from an already computed q(gamma|x) and run the slab head on it."""
        sample = beta_sample_pathwise(q_beta, rng, method=self.config.beta_sampler, noise=noise)
        slab = self.slab_posterior(feature, sample.value)
        return HsvaePosterior(q_beta, sample.value,
                              SpikeSlabParams(sample.value, slab, self.config.spike_std), sample.clamped)

    def _require_hsvae(self) -> None:
        if self.variant is not Variant.HSVAE:
            raise ContractError(f"operation needs an HSVAE model, this one is {self.variant.value}")

    # Decoder

    def decode(self, z: Tensor, batch: Batch) -> Tensor:
        """Teacher-forced logits (B, T+1, V); every step reads [embedding; z]."""
        z = T.as_tensor(z)
        if z.ndim != 2 or z.shape != (batch.size, self.config.latent_dim):
            raise ContractError(f"z must be ({batch.size}, {self.config.latent_dim}), got {z.shape}")
        table = self.store["decoder.embedding"]
        steps = [
            T.concat([T.embedding(table, batch.decoder_inputs[:, t]), z], axis=-1)
            for t in range(batch.decoder_inputs.shape[1])
        ]
        _, states = layers.run_gru(steps, layers.GRUParams.from_store(self.store, "decoder.gru"),
                                   mask=batch.target_mask)
        hidden = T.stack(states, axis=1)
        B, S, H = hidden.shape
        logits = layers.linear(self.store, "decoder.out", hidden.reshape(B * S, H))
        return logits.reshape(B, S, self.vocab_size)

    def greedy_decode(self, z: np.ndarray, max_length: int = 30) -> List[int]:
        """Free-running decoding from <eos> until <eos> or max_length tokens."""
        z = np.asarray(z).reshape(1, -1)
        gru = layers.GRUParams.from_store(self.store, "decoder.gru")
        table = self.store["decoder.embedding"]
        h = Tensor(np.zeros((1, self.config.hidden_dim)))
        token, out = EOS_ID, []
        with self.no_grad():
            for _ in range(max_length):
                x = T.concat([T.embedding(table, np.array([token])), Tensor(z)], axis=-1)
                h = layers.gru_cell(x, h, gru)
                logits = layers.linear(self.store, "decoder.out", h)
                token = int(np.argmax(logits.data[0]))
                if token == EOS_ID:
                    break
                out.append(token)
        return out

    # Evaluation codes

    def gate_means(self, batch: Batch) -> np.ndarray:
        """Posterior Beta means alpha / (alpha + beta), (B, D)."""
        with self.no_grad():
            return self.beta_posterior(self.encode(batch)).mean().numpy()

    def posterior_mean_codes(self, batch: Batch) -> np.ndarray:
        """
        Mean codes, (B, D).

        HSVAE: (1 - E[gamma]) * mu with the slab head fed E[gamma]; the spike
        has mean 0. Gaussian variants: mu.
        """
        with self.no_grad():
            feature = self.encode(batch)
            if self.variant is not Variant.HSVAE:
                return self.gaussian_posterior(feature).mean.numpy()
            gate = self.beta_posterior(feature).mean()
            slab = self.slab_posterior(feature, gate)
            return ((1.0 - gate) * slab.mean).numpy()

    def posterior_sample_codes(self, batch: Batch, rng: RngStream) -> np.ndarray:
        """One posterior draw per sentence, (B, D); HSVAE gates are hard Bernoulli draws."""
        with self.no_grad():
            return self.sample_codes(self.encode(batch), rng).numpy()

    def sample_codes(self, feature: Tensor, rng: RngStream) -> Tensor:
        """
        One posterior code per feature row.

        HSVAE draws a gate from q(gamma|x) and one z for it with a hard
        spike/slab choice; the other variants draw from the Gaussian posterior.
        """
        if self.variant is not Variant.HSVAE:
            return gaussian_sample(self.gaussian_posterior(feature), rng)
        post = self.hsvae_posterior(feature, rng)
        return spike_slab_sample(post.slab, self.config.temperature, rng, hard=True)

    def sample_prior_code(self, rng: RngStream) -> np.ndarray:
        """
        One code (D,) from the model's prior.

        HSVAE: gate ~ Beta(prior_alpha, prior_beta), then a hard spike/slab
        draw. MATVAE: fixed-weight spike/slab. Others: N(0, I).
        """
        c = self.config
        shape = (c.latent_dim,)
        if self.variant is Variant.HSVAE:
            gate = beta_sample_pathwise(BetaParams.constant(c.prior_alpha, c.prior_beta, shape), rng).value
        elif self.variant is Variant.MATVAE:
            gate = Tensor(np.full(shape, c.matvae_prior_weight))
        else:
            return rng.normal(shape)
        prior = SpikeSlabParams(gate, GaussianParams.standard(shape), c.spike_std)
        return spike_slab_sample(prior, c.temperature, rng, hard=True).numpy()

    # Diagnostics

    def pin_heads_to_prior(self) -> None:
        """
        Make every posterior head emit the prior regardless of input.

        Head weights are zeroed and output biases set so that the softplus
        outputs reproduce the prior (Beta(prior_alpha, prior_beta) and a
        N(0, 1) slab, or N(0, 1) for Gaussian variants).
        """
        for name, t in self.store.items("heads."):
            t.data = np.zeros_like(t.data)
        c = self.config
        std_bias = _inverse_softplus(1.0 - HEAD_FLOOR)
        if self.variant is Variant.HSVAE:
            self._fill("heads.beta.alpha.bias", _inverse_softplus(c.prior_alpha - HEAD_FLOOR))
            self._fill("heads.beta.beta.bias", _inverse_softplus(c.prior_beta - HEAD_FLOOR))
            self._fill("heads.slab.std.bias", std_bias)
        else:
            self._fill("heads.gauss.std.bias", std_bias)

    def _fill(self, name: str, value: float) -> None:
        t = self.store[name]
        t.data = np.full_like(t.data, value)
