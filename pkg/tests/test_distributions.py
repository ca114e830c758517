"""Samplers, densities and divergences."""

import numpy as np
import pytest
from scipy import integrate, stats

from hsvae.diffcore.rng import RngStream
from hsvae.diffcore.tensor import Tensor, forward_backward
from hsvae.distributions import (
    BetaParams,
    BinaryConcreteParams,
    GaussianParams,
    SpikeSlabParams,
    beta_kl,
    beta_log_prob,
    beta_sample_pathwise,
    binary_concrete_sample,
    gaussian_kl,
    gaussian_sample,
    median_bandwidth,
    mmd,
    spike_slab_kl,
    spike_slab_kl_mc,
    spike_slab_log_prob,
    spike_slab_sample,
)
from hsvae.errors import ContractError
from hsvae.numerics import GridSpec, beta_ppf, numeric_kl


def _gauss(mean, std):
    return GaussianParams(Tensor(np.atleast_1d(np.asarray(mean, dtype=float))),
                          Tensor(np.atleast_1d(np.asarray(std, dtype=float))))


class TestGaussian:
    def test_kl_values(self, float64):
        assert gaussian_kl(_gauss(0.0, 2.0), _gauss(0.0, 1.0)).item() == pytest.approx(0.8069, abs=1e-4)
        assert gaussian_kl(_gauss(1.0, 1.0), _gauss(0.0, 1.0)).item() == pytest.approx(0.5, abs=1e-12)

    def test_kl_of_identical_is_zero(self, float64):
        q = _gauss([0.3, -1.2], [0.5, 2.0])
        assert gaussian_kl(q, q).item() == 0.0

    def test_sample_moments(self, float64):
        params = GaussianParams(Tensor(np.full(100000, 2.0)), Tensor(np.full(100000, 0.5)))
        z = gaussian_sample(params, RngStream(42)).numpy()
        assert z.mean() == pytest.approx(2.0, abs=0.01)
        assert z.std() == pytest.approx(0.5, abs=0.01)

    def test_invalid_params(self):
        with pytest.raises(ContractError):
            _gauss([0.0], [0.0])
        with pytest.raises(ContractError):
            GaussianParams(Tensor(np.zeros(2)), Tensor(np.ones(3)))


class TestBeta:
    def test_log_prob_matches_scipy(self, float64):
        alpha = np.array([[0.5, 2.0, 8.0], [1.0, 3.0, 0.7]])
        beta = np.array([[0.5, 5.0, 2.0], [1.0, 1.5, 4.0]])
        x = np.array([[0.2, 0.3, 0.9], [0.5, 0.65, 0.05]])
        got = beta_log_prob(Tensor(x), BetaParams(Tensor(alpha), Tensor(beta))).numpy()
        np.testing.assert_allclose(got, stats.beta.logpdf(x, alpha, beta).sum(axis=-1),
                                   rtol=1e-8, atol=1e-10)

    def test_uniform_inverse_cdf_returns_noise(self, float64):
        u = np.array([0.1, 0.4, 0.75, 0.9])
        sample = beta_sample_pathwise(BetaParams.constant(1.0, 1.0, (4,)), None, method="inverse_cdf", noise=u)
        np.testing.assert_allclose(sample.value.numpy(), u, atol=1e-12)
        assert sample.clamped == 0

    def test_gamma_sampler_mean(self, float64):
        params = BetaParams.constant(2.0, 5.0, (100000,))
        z = beta_sample_pathwise(params, RngStream(42), method="gamma").value.numpy()
        assert z.mean() == pytest.approx(2.0 / 7.0, abs=0.005)
        assert z.min() > 0.0 and z.max() < 1.0

    def test_tiny_shapes_are_clamped(self, float64):
        sample = beta_sample_pathwise(BetaParams.constant(1e-3, 1e-3, (500,)), RngStream(1))
        z = sample.value.numpy()
        assert np.all((z >= 1e-6) & (z <= 1.0 - 1e-6))
        assert sample.clamped > 0

    def test_implicit_gradient_matches_quantile_differences(self, float64):
        u = np.array([0.2, 0.5, 0.8])
        alpha = Tensor(np.array([2.0, 0.7, 3.0]), requires_grad=True)
        beta = Tensor(np.array([3.0, 1.5, 0.9]), requires_grad=True)
        _, (g_a, g_b) = forward_backward(
            lambda a, b: beta_sample_pathwise(BetaParams(a, b), None, "inverse_cdf", u).value.sum(),
            [alpha, beta])
        h = 1e-6
        a0, b0 = alpha.data, beta.data
        num_a = (beta_ppf(u, a0 + h, b0) - beta_ppf(u, a0 - h, b0)) / (2 * h)
        num_b = (beta_ppf(u, a0, b0 + h) - beta_ppf(u, a0, b0 - h)) / (2 * h)
        np.testing.assert_allclose(g_a, num_a, rtol=1e-4)
        np.testing.assert_allclose(g_b, num_b, rtol=1e-4)

    def test_kl_against_uniform(self, float64):
        kl = beta_kl(BetaParams.constant(2.0, 2.0, (1,)), BetaParams.constant(1.0, 1.0, (1,)))
        assert kl.item() == pytest.approx(0.1251, abs=1e-4)

    def test_unknown_method(self):
        with pytest.raises(ContractError):
            beta_sample_pathwise(BetaParams.constant(1.0, 1.0, (2,)), RngStream(0), method="rejection")

    def test_gamma_method_rejects_fixed_noise(self):
        with pytest.raises(ContractError):
            beta_sample_pathwise(BetaParams.constant(1.0, 1.0, (2,)), RngStream(0), noise=np.full(2, 0.5))


class TestBinaryConcrete:
    def test_midpoint(self, float64):
        params = BinaryConcreteParams(Tensor([0.5]), temperature=0.5)
        assert binary_concrete_sample(params, None, noise=np.array([0.5])).item() == pytest.approx(0.5)

    def test_exceedance_probability_is_gate(self, float64):
        params = BinaryConcreteParams(Tensor(np.full(100000, 0.8)), temperature=0.5)
        b = binary_concrete_sample(params, RngStream(42)).numpy()
        assert np.mean(b > 0.5) == pytest.approx(0.8, abs=0.01)

    def test_gate_must_be_interior(self):
        with pytest.raises(ContractError):
            BinaryConcreteParams(Tensor([0.0, 0.5]), temperature=0.5)
        with pytest.raises(ContractError):
            BinaryConcreteParams(Tensor([0.5]), temperature=0.0)


class TestSpikeSlab:
    def test_all_spike_gate_collapses_to_spike(self, float64):
        shape = (2000,)
        params = SpikeSlabParams(Tensor(np.ones(shape)), _gauss(np.full(shape, 5.0), np.ones(shape)), 1e-3)
        z = spike_slab_sample(params, 0.5, RngStream(42)).numpy()
        assert np.all(np.abs(z) < 1e-2)

    def test_zero_gate_is_slab(self, float64):
        params = SpikeSlabParams(Tensor(np.zeros(3)), _gauss([1.0, 2.0, 3.0], [1.0, 1.0, 1.0]), 0.01)
        noise = (np.full(3, 0.5), np.array([0.1, -0.2, 0.3]), np.zeros(3))
        z = spike_slab_sample(params, 0.5, None, noise=noise).numpy()
        np.testing.assert_allclose(z, [1.1, 1.8, 3.3])

    def test_hard_draw_selects_component(self, float64):
        params = SpikeSlabParams(Tensor([0.3, 0.3]), _gauss([4.0, 4.0], [1.0, 1.0]), 0.01)
        noise = (np.array([0.9, 0.1]), np.zeros(2), np.zeros(2))
        z = spike_slab_sample(params, 0.5, None, hard=True, noise=noise).numpy()
        np.testing.assert_allclose(z, [0.0, 4.0])

    def test_log_prob_integrates_to_one(self, float64):
        params = SpikeSlabParams(Tensor([0.3]), _gauss([1.0], [0.5]), 0.05)
        x = np.linspace(-10.0, 10.0, 200001)
        density = np.exp(spike_slab_log_prob(Tensor(x[:, None]), params).numpy())
        assert integrate.simpson(density, x=x) == pytest.approx(1.0, abs=1e-4)

    def test_paired_kl_value_and_bound(self, float64):
        gate = Tensor([0.5])
        q = SpikeSlabParams(gate, _gauss([1.0], [1.0]), 0.1)
        p = SpikeSlabParams(gate, _gauss([0.0], [1.0]), 0.1)
        paired = spike_slab_kl(q, p).item()
        assert paired == pytest.approx(0.25, abs=1e-12)

        def log_density(params):
            return lambda x: spike_slab_log_prob(Tensor(x[:, None]), params).numpy()

        exact = numeric_kl(log_density(q), log_density(p), GridSpec(-12.0, 12.0, 240001))
        assert 0.0 <= exact <= paired

    def test_mc_kl_is_unbiased_and_within_paired_bound(self, float64):
        n = 10000
        gate = Tensor(np.full((n, 1), 0.5))
        q = SpikeSlabParams(gate, _gauss(np.ones((n, 1)), np.ones((n, 1))), 0.1)
        p = SpikeSlabParams(gate, _gauss(np.zeros((n, 1)), np.ones((n, 1))), 0.1)
        z = spike_slab_sample(q, 0.5, RngStream(42), hard=True)
        draws = spike_slab_kl_mc(z, q, p).numpy()
        standard_error = draws.std(ddof=1) / np.sqrt(n)

        def log_density(mean):
            single = SpikeSlabParams(Tensor([0.5]), _gauss([mean], [1.0]), 0.1)
            return lambda x: spike_slab_log_prob(Tensor(x[:, None]), single).numpy()

        exact = numeric_kl(log_density(1.0), log_density(0.0), GridSpec(-12.0, 12.0, 240001))
        assert abs(draws.mean() - exact) <= 3.0 * standard_error
        assert draws.mean() <= spike_slab_kl(q, p).numpy()[0] + 3.0 * standard_error

    def test_paired_kl_needs_shared_gate(self, float64):
        q = SpikeSlabParams(Tensor([0.5]), _gauss([1.0], [1.0]), 0.1)
        p = SpikeSlabParams(Tensor([0.4]), _gauss([0.0], [1.0]), 0.1)
        with pytest.raises(ContractError):
            spike_slab_kl(q, p)

    def test_gate_range_checked(self):
        with pytest.raises(ContractError):
            SpikeSlabParams(Tensor([1.5]), _gauss([0.0], [1.0]), 0.1)


class TestMMD:
    def test_identical_samples(self, float64):
        x = np.random.default_rng(42).normal(size=(50, 3))
        assert mmd(Tensor(x), Tensor(x)).item() == pytest.approx(0.0, abs=1e-12)

    def test_shifted_distribution_scores_higher(self, float64):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(200, 2))
        same = rng.normal(size=(200, 2))
        shifted = rng.normal(loc=3.0, size=(200, 2))
        assert mmd(Tensor(x), Tensor(shifted)).item() > mmd(Tensor(x), Tensor(same)).item()

    def test_median_bandwidth(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([[3.0]])
        # pairwise distances 1, 3, 2
        assert median_bandwidth(x, y) == pytest.approx(2.0)
        assert median_bandwidth(np.zeros((1, 2)), np.zeros((0, 2))) == 1.0

    def test_shape_checks(self, float64):
        with pytest.raises(ContractError):
            mmd(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 4))))
        with pytest.raises(ContractError):
            mmd(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2))), bandwidth=0.0)
