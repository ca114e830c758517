"""Network, objectives and checkpoints."""

import numpy as np
import pytest

from hsvae.config import ModelConfig, Variant
from hsvae.diffcore.rng import RngStream
from hsvae.diffcore.tensor import Tensor
from hsvae.distributions import GaussianParams, mmd, spike_slab_sample
from hsvae.errors import ContractError
from hsvae.model.checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from hsvae.model.network import TextVAE
from hsvae.model.objectives import (
    compute_elbo,
    hsvae_elbo,
    matvae_objective,
    matvae_prior,
    posterior_penalty,
    reconstruction_loglik,
    vae_elbo,
)
from hsvae.textdata import make_batch

ALL_VARIANTS = list(Variant)


@pytest.fixture
def batch(small_corpus):
    return make_batch(small_corpus.sentences[:4])


class TestNetwork:
    def test_vocab_must_exceed_reserved(self):
        with pytest.raises(ContractError):
            TextVAE(ModelConfig(), 3)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_code_shapes(self, model_factory, batch, variant):
        model = model_factory(variant)
        assert model.posterior_mean_codes(batch).shape == (4, 4)
        assert model.posterior_sample_codes(batch, RngStream(1)).shape == (4, 4)
        assert model.sample_prior_code(RngStream(2)).shape == (4,)

    def test_gaussian_head_missing_on_hsvae(self, model_factory, batch):
        model = model_factory(Variant.HSVAE)
        with pytest.raises(ContractError):
            model.gaussian_posterior(model.encode(batch))

    def test_beta_head_missing_on_vae(self, model_factory, batch):
        model = model_factory(Variant.VAE)
        with pytest.raises(ContractError):
            model.gate_means(batch)

    def test_decode_checks_code_shape(self, model_factory, batch):
        model = model_factory(Variant.VAE)
        with pytest.raises(ContractError):
            model.decode(Tensor(np.zeros((3, 4))), batch)

    def test_decode_logits_shape(self, model_factory, batch, small_corpus):
        model = model_factory(Variant.VAE)
        logits = model.decode(Tensor(np.zeros((4, 4))), batch)
        assert logits.shape == (4, batch.targets.shape[1], len(small_corpus.vocab))

    def test_encoder_ignores_padding(self, model_factory, small_corpus):
        model = model_factory(Variant.VAE)
        short = small_corpus.sentences[0][:2]
        alone = model.encode(make_batch([short])).data[0]
        longer = np.concatenate([small_corpus.sentences[1], small_corpus.sentences[2]])
        padded = model.encode(make_batch([short, longer])).data[0]
        np.testing.assert_allclose(alone, padded, rtol=1e-5, atol=1e-6)

    def test_encoder_is_order_sensitive(self, model_factory):
        model = model_factory(Variant.VAE, seed=5)
        tokens = np.array([3, 4, 5, 6])
        forward = model.encode(make_batch([tokens])).data
        backward = model.encode(make_batch([tokens[::-1].copy()])).data
        assert not np.allclose(forward, backward)

    def test_decoder_is_conditioned_on_code(self, model_factory, batch):
        model = model_factory(Variant.VAE)
        zeros = model.decode(Tensor(np.zeros((4, 4))), batch).data
        ones = model.decode(Tensor(np.ones((4, 4))), batch).data
        assert not np.allclose(zeros, ones)

    def test_gate_means_in_unit_interval(self, model_factory, batch):
        means = model_factory(Variant.HSVAE).gate_means(batch)
        assert means.shape == (4, 4)
        assert np.all((means > 0) & (means < 1))

    def test_pinned_hsvae_mean_codes_are_zero(self, model_factory, batch, float64):
        model = model_factory(Variant.HSVAE)
        model.pin_heads_to_prior()
        np.testing.assert_allclose(model.gate_means(batch), np.full((4, 4), 0.5), atol=1e-9)
        np.testing.assert_allclose(model.posterior_mean_codes(batch), np.zeros((4, 4)), atol=1e-12)

    def test_greedy_decode_respects_max_length(self, model_factory):
        model = model_factory(Variant.VAE)
        tokens = model.greedy_decode(np.zeros(4), max_length=5)
        assert len(tokens) <= 5
        assert all(t != 1 for t in tokens)


class TestReconstruction:
    def test_uniform_logits(self, float64):
        V, n = 20003, 10
        logits = Tensor(np.zeros((1, n, V)))
        targets = np.arange(3, 3 + n).reshape(1, n)
        value = reconstruction_loglik(logits, targets, np.ones((1, n))).item()
        assert value == pytest.approx(-n * np.log(V), abs=1e-9)
        assert value == pytest.approx(-99.04, abs=0.01)

    def test_padding_contributes_zero(self, float64):
        rng = np.random.default_rng(42)
        logits = Tensor(rng.normal(size=(1, 4, 6)))
        targets = np.array([[3, 4, 5, 2]])
        full = reconstruction_loglik(logits, targets, np.array([[1.0, 1.0, 0.0, 0.0]])).item()
        truncated = reconstruction_loglik(Tensor(logits.data[:, :2]), targets[:, :2], np.ones((1, 2))).item()
        assert full == pytest.approx(truncated, abs=1e-12)

    def test_shape_mismatch(self, float64):
        with pytest.raises(ContractError):
            reconstruction_loglik(Tensor(np.zeros((1, 3, 5))), np.zeros((1, 2), dtype=int), np.ones((1, 2)))


class TestObjectives:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_zero_weights_leave_reconstruction(self, model_factory, batch, variant):
        model = model_factory(variant)
        terms = compute_elbo(model, batch, RngStream(3), psi=0.0, lam=0.0)
        if variant in (Variant.VAE_L1, Variant.VAE_L2):
            expected = terms.reconstruction.item() - terms.penalty.item()
        else:
            expected = terms.reconstruction.item()
        assert terms.objective.item() == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("variant", [Variant.HSVAE, Variant.VAE, Variant.VAE_L1, Variant.VAE_L2])
    def test_pinned_heads_have_zero_kl(self, model_factory, batch, variant, float64):
        model = model_factory(variant)
        model.pin_heads_to_prior()
        terms = compute_elbo(model, batch, RngStream(4))
        assert terms.kl_z.item() == pytest.approx(0.0, abs=1e-6)
        assert terms.kl_gamma.item() == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("variant, expected", [
        (Variant.VAE_L2, 0.4), (Variant.VAE_L1, 0.4), (Variant.VAE, 0.0), (Variant.MATVAE, 0.0),
    ])
    def test_penalty(self, variant, expected, float64):
        q = GaussianParams(Tensor([[1.0, -1.0]]), Tensor([[1.0, 1.0]]))
        assert posterior_penalty(q, variant, 0.1).data[0] == pytest.approx(expected)

    def test_l1_and_l2_differ_off_unit_values(self, float64):
        q = GaussianParams(Tensor([[2.0, 0.0]]), Tensor([[0.5, 0.5]]))
        assert posterior_penalty(q, Variant.VAE_L1, 1.0).data[0] == pytest.approx(3.0)
        assert posterior_penalty(q, Variant.VAE_L2, 1.0).data[0] == pytest.approx(4.5)

    def test_matvae_reduces_to_vae(self, model_factory, batch, float64):
        matvae = model_factory(Variant.MATVAE, matvae_prior_weight=0.0, matvae_kl="slab")
        vae = TextVAE(matvae.config.model_copy(update={"variant": Variant.VAE}), matvae.vocab_size,
                      store=matvae.store)
        mat_terms = matvae_objective(matvae, batch, RngStream(9), lam=0.0)
        vae_terms = vae_elbo(vae, batch, RngStream(9))
        assert mat_terms.objective.item() == pytest.approx(vae_terms.objective.item(), abs=1e-6)

    def test_matvae_needs_two_sentences(self, model_factory, small_corpus):
        model = model_factory(Variant.MATVAE)
        with pytest.raises(ContractError):
            matvae_objective(model, make_batch(small_corpus.sentences[:1]), RngStream(0))

    def test_matvae_mmd_non_negative(self, model_factory, batch):
        terms = matvae_objective(model_factory(Variant.MATVAE), batch, RngStream(0))
        assert terms.mmd.item() >= 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matvae_kl_non_negative(self, model_factory, batch, seed):
        terms = matvae_objective(model_factory(Variant.MATVAE, seed=seed), batch, RngStream(seed))
        assert terms.kl_z.item() >= 0.0

    def test_matvae_bound_adds_spike_term(self, model_factory, batch, float64):
        bound = model_factory(Variant.MATVAE, matvae_prior_weight=0.5)
        slab = TextVAE(bound.config.model_copy(update={"matvae_kl": "slab"}), bound.vocab_size,
                       store=bound.store)
        gap = matvae_objective(bound, batch, RngStream(2)).kl_z.item() - \
            matvae_objective(slab, batch, RngStream(2)).kl_z.item()
        assert gap == pytest.approx(4 * np.log(2.0), abs=1e-9)

    def test_mmd_of_prior_draws_vanishes(self, float64):
        n = 200
        prior = matvae_prior(ModelConfig(variant=Variant.MATVAE, latent_dim=4), (n, 4))

        def draw(seed, purpose):
            return spike_slab_sample(prior, 0.5, RngStream(seed).derive(purpose), hard=True)

        values = [mmd(draw(seed, "q"), draw(seed, "p")).item() for seed in range(10)]
        assert all(v >= 0.0 for v in values)
        assert np.mean(values) < 3.0 / n
        shifted = mmd(draw(0, "q"), draw(0, "p") + 1.0).item()
        assert shifted > 10 * np.mean(values)

    def test_hsvae_mc_kl_within_paired_bound(self, model_factory, small_corpus, float64):
        paired = model_factory(Variant.HSVAE)
        mc = TextVAE(paired.config.model_copy(update={"kl_estimator": "mc"}), paired.vocab_size,
                     store=paired.store)
        batch = make_batch(small_corpus.sentences[:4] * 250)
        # Same seed, same gate draw: the paired value is the bound for that draw
        diffs = np.array([hsvae_elbo(mc, batch, RngStream(seed)).kl_z.item()
                          - hsvae_elbo(paired, batch, RngStream(seed)).kl_z.item() for seed in range(10)])
        standard_error = diffs.std(ddof=1) / np.sqrt(len(diffs))
        assert diffs.mean() <= 3.0 * standard_error

    def test_hsvae_objective_standard_error(self, model_factory, batch):
        model = model_factory(Variant.HSVAE)
        values = np.array([hsvae_elbo(model, batch, RngStream(seed)).objective.item() for seed in range(200)])
        standard_error = values.std(ddof=1) / np.sqrt(len(values))
        assert standard_error < 0.05 * abs(values.mean())

    @pytest.mark.parametrize("estimator", ["paired", "mc"])
    def test_hsvae_gradients_reach_every_head(self, model_factory, batch, estimator):
        model = model_factory(Variant.HSVAE, kl_estimator=estimator, mc_gamma=2, mc_z=2)
        terms = hsvae_elbo(model, batch, RngStream(5))
        (-terms.objective).backward()
        grads = model.store.grads()
        for name in ("encoder.embedding", "heads.beta.alpha.weight", "heads.slab.mean.weight",
                     "decoder.out.weight"):
            assert np.any(grads[name] != 0), name
        assert 0.0 < terms.gate_mean < 1.0

    def test_same_noise_same_objective(self, model_factory, batch):
        model = model_factory(Variant.HSVAE)
        a = hsvae_elbo(model, batch, RngStream(11)).objective.item()
        b = hsvae_elbo(model, batch, RngStream(11)).objective.item()
        assert a == b


class TestCheckpoint:
    def test_save_load(self, model_factory, tmp_path):
        model = model_factory(Variant.HSVAE, psi=0.3)
        stream = RngStream(8)
        stream.normal(5)
        path = tmp_path / "ckpt" / "epoch-001.ckpt"
        save_checkpoint(str(path), model, epoch=1, step=12,
                        optimizer={"opt.m.x": np.ones(3)}, optimizer_step=12,
                        rng_state=stream.state(), meta={"note": "unit"})
        ckpt = load_checkpoint(str(path))
        assert ckpt.model_config == model.config
        assert (ckpt.epoch, ckpt.step, ckpt.optimizer_step) == (1, 12, 12)
        assert ckpt.meta == {"note": "unit"}
        np.testing.assert_array_equal(ckpt.optimizer["opt.m.x"], np.ones(3))
        for name, value in model.store.state().items():
            np.testing.assert_array_equal(ckpt.params[name], value.astype(np.float32))
        np.testing.assert_array_equal(RngStream.from_state(ckpt.rng_state).normal(3), stream.normal(3))
        assert checkpoint_id(str(path)) == "epoch-001.ckpt"

    def test_rebuilt_model_matches(self, model_factory, batch, tmp_path):
        model = model_factory(Variant.VAE_L2)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model)
        rebuilt = load_checkpoint(path).build_model()
        np.testing.assert_allclose(rebuilt.posterior_mean_codes(batch), model.posterior_mean_codes(batch))

    def test_rebuild_dtype(self, model_factory, tmp_path):
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model_factory(Variant.HSVAE))
        ckpt = load_checkpoint(path)
        rebuilt = ckpt.build_model(np.float64)
        for name, value in rebuilt.store.state().items():
            assert value.dtype == np.float64
            np.testing.assert_array_equal(value, ckpt.params[name].astype(np.float64))

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ContractError):
            load_checkpoint(str(path))
        with pytest.raises(ContractError):
            load_checkpoint(str(tmp_path / "missing.ckpt"))

    def test_rejects_trailing_bytes(self, model_factory, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(str(path), model_factory(Variant.VAE))
        with open(path, "ab") as f:
            f.write(b"\x00\x00\x00\x00")
        with pytest.raises(ContractError):
            load_checkpoint(str(path))
