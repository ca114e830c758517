"""Finite-difference checks of the autodiff graph."""

import numpy as np
import pytest

from hsvae.diffcore import tensor as T
from hsvae.diffcore.rng import RngStream
from hsvae.errors import ContractError
from hsvae.gradcheck import check_op, gru_checks, model_checks, primitive_checks, run_suite, sampler_checks


def _failures(results):
    return [(r.name, r.max_rel_error) for r in results if not r.passed]


class TestCheckOp:
    def test_detects_wrong_gradient(self):
        def broken(a):
            return T.custom(a.data ** 2, [a], lambda g: [g], "broken_square")

        result = check_op("broken_square", broken, [np.array([1.5, -2.0])])
        assert not result.passed
        assert result.max_rel_error > 0.1

    def test_correct_gradient_passes(self):
        result = check_op("cube", lambda a: a * a * a, [np.array([0.7, -1.3, 2.0])])
        assert result.passed
        assert result.threshold == 1e-4


class TestGroups:
    def test_primitives(self):
        results = primitive_checks(RngStream(0).derive("gradcheck"))
        assert len(results) >= 25
        assert _failures(results) == []

    def test_gru(self):
        assert _failures(gru_checks(RngStream(0).derive("gradcheck"))) == []

    def test_samplers(self):
        results = sampler_checks(RngStream(0).derive("gradcheck"))
        assert results
        assert _failures(results) == []

    @pytest.mark.slow
    def test_models(self):
        results = model_checks(seed=0)
        assert {r.name for r in results} >= {"hsvae_elbo", "matvae_objective", "vae_elbo_VAE"}
        assert _failures(results) == []

    def test_suite_selects_groups(self):
        results = run_suite(seed=0, groups=["gru"])
        assert [r.name for r in results] == ["gru_cell_1_step", "gru_5_steps"]

    def test_unknown_group(self):
        with pytest.raises(ContractError):
            run_suite(groups=["everything"])
