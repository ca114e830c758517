"""Class sparsity patterns and class-level divergences."""

import numpy as np
import pandas as pd
import pytest

from hsvae.analysis import (
    ClassPattern,
    binarize,
    class_kl_from_counts,
    class_kl_matrix,
    gamma_class,
    mean_off_diagonal,
    pattern_distance,
    pattern_distance_matrix,
    patterns_from_gate_means,
    spearman_link,
    write_class_kl_csv,
    write_gamma_class_csv,
)
from hsvae.config import SynthSpec, Variant
from hsvae.errors import ContractError
from hsvae.textdata import synth_generate


class TestGammaClass:
    def test_single_sentence_is_thresholded(self):
        (pattern,) = patterns_from_gate_means(np.array([[0.9, 0.1]]), ["a"], ["a"])
        np.testing.assert_array_equal(pattern.gamma, [1.0, 0.0])
        assert pattern.support == 1

    def test_threshold_is_inclusive(self):
        np.testing.assert_array_equal(binarize(np.array([0.5, 0.4999])), [1.0, 0.0])

    def test_half_of_class_on(self):
        means = np.array([[0.8, 0.2], [0.3, 0.2], [0.9, 0.9]])
        patterns = patterns_from_gate_means(means, ["a", "a", "b"], ["a", "b"])
        np.testing.assert_allclose(patterns[0].gamma, [0.5, 0.0])
        np.testing.assert_allclose(patterns[1].gamma, [1.0, 1.0])

    def test_empty_class_rejected(self):
        with pytest.raises(ContractError):
            patterns_from_gate_means(np.array([[0.9, 0.1]]), ["a"], ["a", "b"])

    def test_from_model(self, model_factory, small_corpus):
        patterns = gamma_class(small_corpus, model_factory(Variant.HSVAE), batch_size=5)
        assert [p.class_id for p in patterns] == small_corpus.classes
        assert all(p.gamma.shape == (4,) for p in patterns)
        assert sum(p.support for p in patterns) == len(small_corpus)

    def test_csv_layout(self, tmp_path):
        path = str(tmp_path / "gamma_class.csv")
        write_gamma_class_csv(path, [ClassPattern("pos", np.array([1.0, 0.25]), 4),
                                     ClassPattern("neg", np.array([0.0, 1.0]), 2)])
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["class", "0", "1"]
        assert frame["class"].tolist() == ["pos", "neg"]


class TestPatternDistance:
    def test_hamming(self):
        assert pattern_distance(np.array([1, 0, 1]), np.array([0, 0, 1])) == 1

    def test_thresholds_fractional_patterns(self):
        assert pattern_distance(np.array([0.6, 0.4]), np.array([0.9, 0.1])) == 0

    def test_matrix_is_symmetric_with_zero_diagonal(self):
        patterns = [ClassPattern("a", [1, 0, 1], 1), ClassPattern("b", [0, 0, 1], 1),
                    ClassPattern("c", [0, 1, 0], 1)]
        frame = pattern_distance_matrix(patterns)
        matrix = frame.to_numpy()
        np.testing.assert_array_equal(matrix, matrix.T)
        np.testing.assert_array_equal(np.diag(matrix), [0, 0, 0])
        assert frame.loc["a", "c"] == 3
        assert mean_off_diagonal(matrix) == pytest.approx(2.0)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            pattern_distance(np.zeros(3), np.zeros(4))


class TestClassKL:
    def test_known_value(self):
        matrix = class_kl_from_counts(np.array([[2, 1, 0], [0, 1, 2]]))
        assert matrix[0, 1] == pytest.approx(0.3662, abs=1e-4)
        assert matrix[1, 1] == 0.0

    def test_identical_classes(self):
        matrix = class_kl_from_counts(np.array([[3, 1], [3, 1]]))
        np.testing.assert_allclose(matrix, np.zeros((2, 2)), atol=1e-15)

    def test_disjoint_vocabularies_diverge(self):
        corpus = synth_generate(SynthSpec(num_classes=2, shared_vocab_size=0, shared_fraction=0.0,
                                          sentences_per_class=100, seed=4))
        klm = class_kl_matrix(corpus)
        assert klm.mean_off_diagonal() > 0
        assert klm.class_ids == ["class0", "class1"]

    def test_shared_vocabulary_reduces_divergence(self):
        means = []
        for fraction in (0.0, 0.5, 0.9):
            corpus = synth_generate(SynthSpec(num_classes=3, shared_fraction=fraction,
                                              sentences_per_class=200, seed=4))
            means.append(class_kl_matrix(corpus).mean_off_diagonal())
        assert means[0] > means[1] > means[2]

    def test_single_class_rejected(self):
        corpus = synth_generate(SynthSpec(num_classes=1, sentences_per_class=5))
        with pytest.raises(ContractError):
            class_kl_matrix(corpus)

    def test_csv_layout(self, tmp_path):
        corpus = synth_generate(SynthSpec(num_classes=3, sentences_per_class=20, seed=1))
        path = str(tmp_path / "class_kl.csv")
        write_class_kl_csv(path, class_kl_matrix(corpus))
        frame = pd.read_csv(path, index_col=0)
        assert list(frame.index) == ["class0", "class1", "class2"]
        assert list(frame.columns) == ["class0", "class1", "class2"]


class TestSpearmanLink:
    def test_monotone_relation(self):
        assert spearman_link([0.1, 0.5, 0.9, 1.4], [1.0, 2.0, 2.5, 4.0]) == pytest.approx(1.0)

    def test_inverse_relation(self):
        assert spearman_link([0.1, 0.5, 0.9], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)

    def test_needs_three_settings(self):
        with pytest.raises(ContractError):
            spearman_link([0.1, 0.2], [1.0, 2.0])
