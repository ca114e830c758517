"""
Finite-difference verification of every gradient in the repository.

All checks run in 64-bit. A vector-valued op is reduced to a scalar with a
fixed random projection; stochastic graphs replay the same RngStream seed on
every evaluation so the noise is held fixed. The Beta sampler uses the
inverse-CDF path here because it is smooth in (alpha, beta) under fixed noise.
"""

import logging
from typing import Callable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from . import numerics
from .config import ModelConfig, Variant
from .diffcore import layers
from .diffcore import tensor as T
from .diffcore.params import ParameterStore
from .diffcore.rng import RngStream
from .diffcore.tensor import Tensor, default_dtype, forward_backward
from .distributions import (
    BetaParams,
    BinaryConcreteParams,
    GaussianParams,
    SpikeSlabParams,
    beta_kl,
    beta_sample_pathwise,
    binary_concrete_sample,
    gaussian_kl,
    mmd,
    spike_slab_sample,
)
from .errors import ContractError
from .model.network import TextVAE
from .model.objectives import hsvae_elbo, matvae_objective, vae_elbo
from .textdata import make_batch

logger = logging.getLogger(__name__)

PRIMITIVE_THRESHOLD = 1e-4
COMPOSITE_THRESHOLD = 1e-3

GROUPS = ("primitives", "gru", "samplers", "models")


class GradCheckResult(BaseModel):
    name: str
    max_rel_error: float
    threshold: float
    passed: bool


def _result(name: str, analytic: np.ndarray, numeric: np.ndarray, threshold: float) -> GradCheckResult:
    report = numerics.compare_gradients(analytic, numeric)
    result = GradCheckResult(name=name, max_rel_error=report.max_rel_error,
                             threshold=threshold, passed=report.passed(threshold))
    level = logging.INFO if result.passed else logging.ERROR
    logger.log(level, f"{name:<28} max_rel_error={result.max_rel_error:.2e} (< {threshold:g}) "
                      f"{'ok' if result.passed else 'FAILED'}")
    return result


def _f64(a) -> Tensor:
    return Tensor(a, dtype=np.float64)


def check_op(name: str, fn: Callable[..., Tensor], arrays: Sequence[np.ndarray],
             threshold: float = PRIMITIVE_THRESHOLD, h: float = 1e-6) -> GradCheckResult:
    """
    Compare autodiff and central-difference gradients of fn w.r.t. every input array.

    fn's output is projected onto fixed random weights to get a scalar.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    with default_dtype(np.float64):
        shape = fn(*[_f64(a) for a in arrays]).shape
        weights = RngStream(0).derive(f"projection:{name}").normal(shape)

        def scalar(*inputs: Tensor) -> Tensor:
            return (fn(*inputs) * weights).sum()

        inputs = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
        _, grads = forward_backward(scalar, inputs)
        numeric = []
        for i in range(len(arrays)):
            def f(x, i=i):
                return scalar(*[_f64(x if j == i else arrays[j]) for j in range(len(arrays))]).item()
            numeric.append(numerics.finite_diff_grad(f, arrays[i], h).reshape(-1))
    analytic = np.concatenate([g.reshape(-1) for g in grads])
    return _result(name, analytic, np.concatenate(numeric), threshold)


def check_store(name: str, store: ParameterStore, objective: Callable[[], Tensor],
                threshold: float = COMPOSITE_THRESHOLD, h: float = 1e-5) -> GradCheckResult:
    """Gradient of a scalar objective w.r.t. every parameter of a store."""
    store.zero_grad()
    objective().backward()
    analytic = store.flatten_grads()
    base = store.flatten()

    def f(vector: np.ndarray) -> float:
        store.assign_flat(vector)
        return objective().item()

    try:
        numeric = numerics.finite_diff_grad(f, base, h)
    finally:
        store.assign_flat(base)
    return _result(name, analytic, numeric, threshold)


def _away_from_zero(rng: RngStream, shape) -> np.ndarray:
    magnitude = 0.5 + rng.uniform(shape)
    sign = np.where(rng.uniform(shape) < 0.5, -1.0, 1.0)
    return sign * magnitude


def primitive_checks(rng: RngStream) -> List[GradCheckResult]:
    n = rng.normal
    positive = lambda shape: 0.5 + 2.0 * rng.uniform(shape)  # noqa: E731
    ids = np.array([[1, 3, 3], [0, 4, 2]])
    targets = np.array([0, 2, 1, 2])
    row_weights = np.array([1.0, 0.0, 1.0, 1.0])

    cases = [
        ("add", T.add, [n((3, 4)), n((4,))]),
        ("sub", T.sub, [n((3, 4)), n((3, 1))]),
        ("mul", T.mul, [n((3, 4)), n((3, 1))]),
        ("div", T.div, [n((3, 4)), positive((3, 4))]),
        ("neg", T.neg, [n((3,))]),
        ("matmul", T.matmul, [n((3, 4)), n((4, 2))]),
        ("matmul_vector", T.matmul, [n((4,)), n((4, 2))]),
        ("transpose", T.transpose, [n((3, 2))]),
        ("reshape", lambda a: T.reshape(a, (2, 6)), [n((3, 4))]),
        ("concat", lambda a, b: T.concat([a, b], axis=-1), [n((2, 3)), n((2, 2))]),
        ("stack", lambda a, b: T.stack([a, b], axis=1), [n((2, 3)), n((2, 3))]),
        ("slice", lambda a: a[1:, ::2], [n((3, 4))]),
        ("sum", lambda a: T.sum_(a, axis=0), [n((3, 4))]),
        ("mean", lambda a: T.mean(a, axis=1, keepdims=True), [n((3, 4))]),
        ("exp", T.exp, [n((3, 4))]),
        ("log", T.log, [positive((3, 4))]),
        ("sigmoid", T.sigmoid, [n((3, 4))]),
        ("tanh", T.tanh, [n((3, 4))]),
        ("softplus", T.softplus, [n((3, 4))]),
        ("square", T.square, [n((3, 4))]),
        ("abs", T.abs_, [_away_from_zero(rng, (3, 4))]),
        ("leaky_relu", lambda a: T.leaky_relu(a, 0.01), [_away_from_zero(rng, (3, 4))]),
        ("clip", lambda a: T.clip(a, -1.0, 1.0), [0.5 * _away_from_zero(rng, (3, 4))]),
        ("logaddexp", T.logaddexp, [n((3, 4)), n((3, 4))]),
        ("logsumexp", lambda a: T.logsumexp(a, axis=-1), [n((3, 4))]),
        ("log_gamma", T.log_gamma, [positive((5,))]),
        ("digamma", T.digamma, [positive((5,))]),
        ("softmax_cross_entropy", lambda a: T.softmax_cross_entropy(a, targets, row_weights), [n((4, 3))]),
        ("embedding", lambda table: T.embedding(table, ids), [n((5, 3))]),
        ("mmd", lambda a, b: mmd(a, b, bandwidth=1.0), [n((4, 2)), n((5, 2)) + 1.0]),
    ]
    return [check_op(name, fn, arrays) for name, fn, arrays in cases]


def gru_checks(rng: RngStream) -> List[GradCheckResult]:
    E, H = 3, 4
    with default_dtype(np.float64):
        arrays = [rng.normal((E, 3 * H)) * 0.5, rng.normal((H, 3 * H)) * 0.5,
                  rng.normal((3 * H,)) * 0.1, rng.normal((3 * H,)) * 0.1]
        x = rng.normal((E,))
        h0 = rng.normal((H,)) * 0.5
        sequence = rng.normal((2, 5, E))
        mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=np.float64)

    def one_step(x_t, h_prev, w_x, w_h, b_x, b_h):
        return layers.gru_cell(x_t, h_prev, layers.GRUParams(w_x, w_h, b_x, b_h))

    def unrolled(w_x, w_h, b_x, b_h):
        steps = [_f64(sequence[:, t, :]) for t in range(sequence.shape[1])]
        final, _ = layers.run_gru(steps, layers.GRUParams(w_x, w_h, b_x, b_h), mask=mask)
        return final

    return [
        check_op("gru_cell_1_step", one_step, [x, h0] + arrays),
        check_op("gru_5_steps", unrolled, arrays, threshold=COMPOSITE_THRESHOLD),
    ]


def sampler_checks(rng: RngStream) -> List[GradCheckResult]:
    u_gate = np.array([0.2, 0.7, 0.45, 0.9])
    u_beta = np.array([0.3, 0.6, 0.85])
    eps = rng.normal((4,))
    eta = rng.normal((4,))

    def concrete(gate):
        return binary_concrete_sample(BinaryConcreteParams(gate, 0.5), None, noise=u_gate)

    def beta_path(alpha, beta):
        return beta_sample_pathwise(BetaParams(alpha, beta), None, method="inverse_cdf", noise=u_beta).value

    def spike_slab(gate, mean, std):
        params = SpikeSlabParams(gate, GaussianParams(mean, std), 0.05)
        z = spike_slab_sample(params, 0.5, None, noise=(u_gate, eps, eta))
        return T.square(z - 0.3)

    def kl_pair(alpha, beta, mean, std):
        q_beta = BetaParams(alpha, beta)
        prior_beta = BetaParams(_f64(np.full(alpha.shape, 2.0)), _f64(np.full(alpha.shape, 3.0)))
        q_gauss = GaussianParams(mean, std)
        return beta_kl(q_beta, prior_beta) + gaussian_kl(q_gauss, GaussianParams.standard(mean.shape))

    return [
        check_op("binary_concrete", concrete, [np.array([0.3, 0.3, 0.6, 0.8])]),
        check_op("beta_pathwise", beta_path, [np.array([2.0, 0.7, 5.0]), np.array([2.0, 1.5, 3.0])],
                 threshold=COMPOSITE_THRESHOLD),
        check_op("spike_slab_sample", spike_slab,
                 [np.array([0.3, 0.5, 0.2, 0.7]), rng.normal((4,)), 0.5 + rng.uniform((4,))],
                 threshold=COMPOSITE_THRESHOLD),
        check_op("closed_form_kls", kl_pair,
                 [np.array([1.5, 0.8]), np.array([2.5, 1.2]), rng.normal((2,)), 0.5 + rng.uniform((2,))]),
    ]


def tiny_model(variant: Variant = Variant.HSVAE, seed: int = 0, **overrides) -> TextVAE:
    """A 64-bit model with V=7, E=3, H=4, D=4 for gradient checks."""
    fields = dict(variant=variant, latent_dim=4, hidden_dim=4, embed_dim=3, beta_sampler="inverse_cdf",
                  prior_alpha=2.0, prior_beta=3.0, temperature=0.5, spike_std=0.05)
    fields.update(overrides)
    with default_dtype(np.float64):
        return TextVAE(ModelConfig(**fields), vocab_size=7, rng=RngStream(seed).derive("tiny-init"))


def _relaxed_codes(model: TextVAE, batch, seed: int) -> Tensor:
    """Encoder -> Beta gate -> slab head -> relaxed spike/slab code, with replayed noise."""
    rng = RngStream(seed)
    post = model.hsvae_posterior(model.encode(batch), rng)
    return spike_slab_sample(post.slab, model.config.temperature, rng)


def model_checks(seed: int = 0) -> List[GradCheckResult]:
    sentence = np.array([3, 5, 4])
    batch = make_batch([sentence, np.array([6, 3])])
    results = []

    hsvae = tiny_model(Variant.HSVAE, seed)
    with default_dtype(np.float64):
        weights = RngStream(seed).derive("encode-projection").normal((4,))
        results.append(check_store(
            "encode_3_tokens", hsvae.store,
            lambda: (hsvae.encode_tokens(sentence) * weights).sum()))
        results.append(check_store(
            "hsvae_posterior", hsvae.store,
            lambda: T.square(_relaxed_codes(hsvae, batch, seed)).sum()))
        results.append(check_store(
            "hsvae_elbo", hsvae.store,
            lambda: hsvae_elbo(hsvae, batch, RngStream(seed)).objective))

        for variant in (Variant.VAE, Variant.VAE_L1, Variant.VAE_L2):
            model = tiny_model(variant, seed)
            results.append(check_store(
                f"vae_elbo_{variant.value}", model.store,
                lambda m=model: vae_elbo(m, batch, RngStream(seed)).objective))

        matvae = tiny_model(Variant.MATVAE, seed, mmd_bandwidth=1.0)
        results.append(check_store(
            "matvae_objective", matvae.store,
            lambda: matvae_objective(matvae, batch, RngStream(seed)).objective))
    return results


def run_suite(seed: int = 0, groups: Optional[Sequence[str]] = None) -> List[GradCheckResult]:
    """Run the selected check groups (primitives, gru, samplers, models); all by default."""
    rng = RngStream(seed).derive("gradcheck")
    selected = set(groups or GROUPS)
    unknown = selected.difference(GROUPS)
    if unknown:
        raise ContractError(f"unknown gradient check group(s): {', '.join(sorted(unknown))}")
    results: List[GradCheckResult] = []
    with default_dtype(np.float64):
        if "primitives" in selected:
            results.extend(primitive_checks(rng))
        if "gru" in selected:
            results.extend(gru_checks(rng))
        if "samplers" in selected:
            results.extend(sampler_checks(rng))
    if "models" in selected:
        results.extend(model_checks(seed))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} of {len(results)} gradient checks failed: {', '.join(failed)}")
    else:
        logger.info(f"All {len(results)} gradient checks passed")
    return results
