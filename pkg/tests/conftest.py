import numpy as np
import pytest

from hsvae.config import ModelConfig, SynthSpec, Variant
from hsvae.diffcore.rng import RngStream
from hsvae.diffcore.tensor import default_dtype
from hsvae.model.network import TextVAE
from hsvae.textdata import synth_generate


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run desk-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def float64():
    """Build tensors in 64-bit for the duration of a test."""
    with default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return RngStream(42)


@pytest.fixture
def small_corpus():
    """Two classes, 12 short sentences each, small disjoint vocabularies."""
    return synth_generate(SynthSpec(
        num_classes=2, class_vocab_size=6, shared_vocab_size=4, shared_fraction=0.3,
        min_length=2, max_length=5, sentences_per_class=12, seed=3,
    ))


def build_model(vocab_size: int, variant: Variant = Variant.HSVAE, seed: int = 0, **fields) -> TextVAE:
    config = ModelConfig(variant=variant, latent_dim=4, hidden_dim=8, embed_dim=6, **fields)
    return TextVAE(config, vocab_size, rng=RngStream(seed).derive("init"))


@pytest.fixture
def model_factory(small_corpus):
    """Callable building a small model of any variant over small_corpus' vocabulary."""
    def make(variant: Variant = Variant.HSVAE, seed: int = 0, **fields) -> TextVAE:
        return build_model(len(small_corpus.vocab), variant, seed, **fields)
    return make


@pytest.fixture
def model_builder():
    """build_model for tests that bring their own corpus."""
    return build_model
