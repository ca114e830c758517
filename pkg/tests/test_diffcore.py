"""Autodiff engine, parameter store, random streams and recurrent layers."""

import numpy as np
import pytest

from hsvae.diffcore import layers
from hsvae.diffcore import tensor as T
from hsvae.diffcore.params import ParameterStore
from hsvae.diffcore.rng import RngStream, purpose_tag
from hsvae.diffcore.tensor import Tensor, default_dtype, forward_backward, get_default_dtype
from hsvae.errors import ContractError, NonFiniteError
from hsvae.gradcheck import check_op


class TestBackward:
    def test_square_through_product(self):
        x = Tensor([3.0], requires_grad=True)
        _, (g,) = forward_backward(lambda a: (a * a).sum(), [x])
        assert g[0] == pytest.approx(6.0)

    def test_detached_branch_gets_exact_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        w = Tensor([0.5, -1.0], requires_grad=True)
        _, (gx, gw) = forward_backward(lambda a, b: (a.detach() * 3.0).sum() + (b * 2.0).sum(), [x, w])
        np.testing.assert_array_equal(gx, np.zeros(2))
        np.testing.assert_allclose(gw, [2.0, 2.0])

    def test_fan_out_accumulates(self, float64):
        x = Tensor([2.0], requires_grad=True)
        _, (g,) = forward_backward(lambda a: (a * 3.0 + T.exp(a) + a).sum(), [x])
        assert g[0] == pytest.approx(4.0 + np.exp(2.0), rel=1e-6)

    def test_broadcast_gradient_is_reduced(self, float64):
        a = Tensor(np.ones((3, 2)), requires_grad=True)
        b = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        _, (ga, gb) = forward_backward(lambda x, y: (x * y).sum(), [a, b])
        np.testing.assert_allclose(ga, np.tile([1.0, 2.0], (3, 1)))
        np.testing.assert_allclose(gb, [3.0, 3.0])

    def test_non_scalar_backward_needs_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_matmul_sum_gradcheck(self, float64):
        rng = np.random.default_rng(42)
        result = check_op("matmul_sum", lambda a, b: T.matmul(a, b).sum(),
                          [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])
        assert result.passed
        assert result.max_rel_error < 1e-4


class TestOps:
    def test_non_finite_output_names_the_op(self):
        with pytest.raises(NonFiniteError) as info:
            T.log(Tensor([-1.0]))
        assert info.value.op == "log"

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ContractError):
            T.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2))))

    def test_embedding_out_of_range(self):
        with pytest.raises(ContractError):
            T.embedding(Tensor(np.ones((4, 2))), np.array([0, 4]))

    def test_embedding_gradient_scatters_repeats(self, float64):
        table = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
        _, (g,) = forward_backward(lambda t: T.embedding(t, np.array([1, 1, 3])).sum(), [table])
        np.testing.assert_allclose(g, [[0, 0], [2, 2], [0, 0], [1, 1]])

    def test_softmax_cross_entropy_uniform_logits(self, float64):
        out = T.softmax_cross_entropy(Tensor(np.zeros((2, 5))), np.array([0, 4]))
        np.testing.assert_allclose(out.data, np.full(2, np.log(5.0)))

    def test_softmax_cross_entropy_zero_weight_masks_row(self, float64):
        logits = Tensor(np.random.default_rng(42).normal(size=(3, 4)), requires_grad=True)
        weights = np.array([1.0, 0.0, 1.0])
        _, (g,) = forward_backward(lambda l: T.softmax_cross_entropy(l, np.array([0, 1, 2]), weights).sum(),
                                   [logits])
        np.testing.assert_array_equal(g[1], np.zeros(4))

    def test_clip_gradient_only_inside_range(self, float64):
        x = Tensor([-2.0, 0.5, 2.0], requires_grad=True)
        _, (g,) = forward_backward(lambda a: T.clip(a, -1.0, 1.0).sum(), [x])
        np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])

    def test_logsumexp_is_stable(self, float64):
        out = T.logsumexp(Tensor([1000.0, 1000.0]), axis=-1)
        assert out.item() == pytest.approx(1000.0 + np.log(2.0))

    def test_log_gamma_gradient_is_digamma(self, float64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        _, (g,) = forward_backward(lambda a: T.log_gamma(a).sum(), [x])
        np.testing.assert_allclose(g, [-0.5772157, 0.4227843], atol=1e-7)

    def test_default_dtype_scope(self):
        assert get_default_dtype() is np.float32
        with default_dtype(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32


class TestParameterStore:
    def _store(self):
        store = ParameterStore()
        store.add("encoder.w", np.ones((2, 2)))
        store.add("heads.b", np.zeros(3))
        store.add("decoder.out", np.full(2, 0.5))
        return store

    def test_unknown_and_duplicate_names(self):
        store = self._store()
        with pytest.raises(ContractError):
            store["encoder.missing"]
        with pytest.raises(ContractError):
            store.add("encoder.w", np.zeros(1))

    def test_flatten_assign_round_trip(self):
        store = self._store()
        vec = np.arange(store.num_values(), dtype=np.float64)
        store.assign_flat(vec)
        np.testing.assert_allclose(store.flatten(), vec)
        with pytest.raises(ContractError):
            store.assign_flat(vec[:-1])

    def test_checksum_ignores_decoder(self):
        store = self._store()
        before = store.checksum()
        store["decoder.out"].data += 1.0
        assert store.checksum() == before
        store["heads.b"].data += 1.0
        assert store.checksum() != before

    def test_frozen_blocks_gradients(self):
        store = self._store()
        with store.frozen():
            out = (store["encoder.w"].sum() + store["decoder.out"].sum())
            out.backward()
        assert store["encoder.w"].grad is None
        np.testing.assert_allclose(store["decoder.out"].grad, [1.0, 1.0])
        assert store["encoder.w"].requires_grad

    def test_astype_copies(self):
        store = self._store()
        cast = store.astype(np.float32)
        assert all(t.dtype == np.float32 for _, t in cast.items())
        assert all(t.requires_grad for _, t in cast.items())
        cast["encoder.w"].data += 1.0
        np.testing.assert_array_equal(store["encoder.w"].data, np.ones((2, 2)))

    def test_load_state_rejects_mismatch(self):
        store = self._store()
        state = store.state()
        state["heads.b"] = np.zeros(4)
        with pytest.raises(ContractError):
            store.load_state(state)
        with pytest.raises(ContractError):
            store.load_state({"encoder.w": np.ones((2, 2))})


class TestRngStream:
    def test_same_seed_same_draws(self):
        a, b = RngStream(7), RngStream(7)
        np.testing.assert_array_equal(a.normal((5,)), b.normal((5,)))
        np.testing.assert_array_equal(a.uniform(3), b.uniform(3))

    def test_derived_streams_differ(self):
        root = RngStream(7)
        assert root.derive("init").seed == 7 ^ purpose_tag("init")
        assert not np.array_equal(root.derive("init").normal(4), root.derive("noise").normal(4))

    def test_state_restores_position(self):
        stream = RngStream(3)
        stream.normal(10)
        saved = stream.state()
        expected = stream.normal(4)
        restored = RngStream.from_state(saved)
        np.testing.assert_array_equal(restored.normal(4), expected)
        assert restored.draws == 14

    def test_unknown_algorithm(self):
        with pytest.raises(ContractError):
            RngStream(0, algorithm="MT19937")


class TestGRU:
    def _params(self, store, rng, input_dim=3, hidden_dim=4):
        layers.init_gru(store, "gru", input_dim, hidden_dim, rng)
        return layers.GRUParams.from_store(store, "gru")

    def test_zero_weights_give_zero_state_and_gradient(self, float64):
        store = ParameterStore()
        params = self._params(store, RngStream(0))
        for _, t in store.items():
            t.data = np.zeros_like(t.data)
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        out, (g,) = forward_backward(lambda a: layers.run_gru([a], params)[0].sum(), [x])
        assert out.item() == 0.0
        np.testing.assert_array_equal(g, np.zeros((2, 3)))

    def test_masked_steps_carry_state(self, float64):
        store = ParameterStore()
        params = self._params(store, RngStream(1))
        rng = np.random.default_rng(42)
        steps = [Tensor(rng.normal(size=(2, 3))) for _ in range(3)]
        mask = np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]])
        final, states = layers.run_gru(steps, params, mask=mask)
        np.testing.assert_allclose(final.data[1], states[0].data[1])
        assert not np.allclose(final.data[0], states[0].data[0])

    def test_single_vector_matches_batch_row(self, float64):
        store = ParameterStore()
        params = self._params(store, RngStream(2))
        x = np.random.default_rng(42).normal(size=(1, 3))
        h = np.zeros((1, 4))
        batched = layers.gru_cell(Tensor(x), Tensor(h), params)
        single = layers.gru_cell(Tensor(x[0]), Tensor(h[0]), params)
        np.testing.assert_allclose(single.data, batched.data[0])

    def test_shape_errors(self, float64):
        store = ParameterStore()
        params = self._params(store, RngStream(0))
        with pytest.raises(ContractError):
            layers.gru_cell(Tensor(np.ones(5)), Tensor(np.zeros(4)), params)
        with pytest.raises(ContractError):
            layers.run_gru([], params)
