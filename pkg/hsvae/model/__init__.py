"""Model family: encoder/decoder graphs, objectives and checkpoints."""

from .checkpoint import Checkpoint, checkpoint_id, load_checkpoint, save_checkpoint
from .network import TextVAE
from .objectives import (
    ElboTerms,
    assemble,
    compute_elbo,
    gate_kl_term,
    hsvae_elbo,
    latent_kl_term,
    matvae_objective,
    posterior_penalty,
    reconstruction_loglik,
    reconstruction_term,
    vae_elbo,
)

__all__ = [
    "Checkpoint",
    "ElboTerms",
    "TextVAE",
    "assemble",
    "checkpoint_id",
    "compute_elbo",
    "gate_kl_term",
    "hsvae_elbo",
    "latent_kl_term",
    "load_checkpoint",
    "matvae_objective",
    "posterior_penalty",
    "reconstruction_loglik",
    "reconstruction_term",
    "save_checkpoint",
    "vae_elbo",
]
