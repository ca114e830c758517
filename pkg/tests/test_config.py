"""Run configuration loading and validation."""

import pytest

from hsvae.config import (
    RunConfig,
    Variant,
    flatten_config,
    load_run_config,
    read_ini,
    update_run_config,
    write_ini,
)
from hsvae.errors import ContractError


def _write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadRunConfig:
    def test_defaults(self):
        run = load_run_config()
        assert run.model.variant is Variant.HSVAE
        assert run.train.lr == pytest.approx(0.0008)
        assert run.classifier.frozen is True

    def test_file_values_are_coerced(self, tmp_path):
        path = _write(tmp_path, "[model]\nvariant = VAE_L1\nlambda = 0.25\nlatent_dim = 8\n"
                                "[train]\nepochs = 3\n[classifier]\nfrozen = false\n")
        run = load_run_config(path)
        assert run.model.variant is Variant.VAE_L1
        assert run.model.lam == pytest.approx(0.25)
        assert run.model.latent_dim == 8
        assert run.train.epochs == 3
        assert run.classifier.frozen is False

    def test_overrides_win(self, tmp_path):
        path = _write(tmp_path, "[train]\nepochs = 3\n")
        run = load_run_config(path, {"train.epochs": 7, "model.psi": None})
        assert run.train.epochs == 7
        assert run.model.psi == pytest.approx(0.5)

    def test_none_value(self, tmp_path):
        path = _write(tmp_path, "[model]\nmmd_bandwidth = none\n")
        assert load_run_config(path).model.mmd_bandwidth is None

    def test_unknown_key_is_named(self, tmp_path):
        path = _write(tmp_path, "[model]\nlatnet_dim = 8\n")
        with pytest.raises(ContractError, match="model.latnet_dim"):
            load_run_config(path)

    def test_invalid_value_is_named(self, tmp_path):
        path = _write(tmp_path, "[train]\nlr = -1\n")
        with pytest.raises(ContractError, match="train.lr"):
            load_run_config(path)

    def test_unknown_section(self, tmp_path):
        path = _write(tmp_path, "[optimizer]\nlr = 0.1\n")
        with pytest.raises(ContractError, match="optimizer"):
            read_ini(path)

    def test_malformed_file(self, tmp_path):
        path = _write(tmp_path, "epochs = 3\n")
        with pytest.raises(ContractError):
            read_ini(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ContractError):
            load_run_config(str(tmp_path / "absent.ini"))

    def test_bad_override_key(self):
        with pytest.raises(ContractError):
            load_run_config(overrides={"epochs": 3})

    def test_matvae_bound_needs_slab_mass(self):
        with pytest.raises(ContractError, match="model"):
            load_run_config(overrides={"model.matvae_prior_weight": 1.0})
        run = load_run_config(overrides={"model.matvae_prior_weight": 1.0, "model.matvae_kl": "mc"})
        assert run.model.matvae_kl == "mc"

    def test_matvae_needs_pairs(self):
        with pytest.raises(ContractError):
            load_run_config(overrides={"model.variant": "MATVAE", "train.batch_size": 1})


class TestUpdateRunConfig:
    def test_section_update(self):
        run = load_run_config(overrides={"model.lambda": 2.0})
        updated = update_run_config(run, "model", {"prior_alpha": 8.0, "prior_beta": 2.0})
        assert (updated.model.prior_alpha, updated.model.prior_beta) == (8.0, 2.0)
        assert updated.model.lam == 2.0
        assert run.model.prior_alpha == 1.0

    def test_invalid_value_is_named(self):
        with pytest.raises(ContractError, match="model.prior_alpha"):
            update_run_config(RunConfig(), "model", {"prior_alpha": 0.0})
        with pytest.raises(ContractError, match="synth.shared_fraction"):
            update_run_config(RunConfig(), "synth", {"shared_fraction": 1.5})

    def test_unknown_section(self):
        with pytest.raises(ContractError):
            update_run_config(RunConfig(), "optimizer", {"lr": 0.1})


class TestWriteIni:
    def test_written_config_reloads_identically(self, tmp_path):
        run = load_run_config(overrides={"model.variant": "MATVAE", "model.lambda": 0.3,
                                         "synth.num_classes": 4})
        path = str(tmp_path / "config.ini")
        write_ini(run, path)
        assert flatten_config(load_run_config(path)) == flatten_config(run)

    def test_flatten_uses_alias(self):
        keys = [key for key, _ in flatten_config(RunConfig())]
        assert "model.lambda" in keys
        assert "model.lam" not in keys
