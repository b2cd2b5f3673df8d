import numpy as np
import pytest

from gsmatch.descriptors import DescriptorSet
from gsmatch.errors import DimensionMismatch
from gsmatch.similarity import (SimilarityMatrix, cosine_similarity_matrix,
                                save_similarity_csv)


def dset(rows):
    return DescriptorSet.from_array(np.asarray(rows, dtype=float))


def test_identical_unit_vectors_score_one():
    a = dset([[1.0, 0.0, 0.0]])
    assert cosine_similarity_matrix(a, a).scores[0, 0] == pytest.approx(1.0)


def test_orthogonal_vectors_score_zero():
    a = dset([[1.0, 0.0]])
    b = dset([[0.0, 3.0]])
    assert cosine_similarity_matrix(a, b).scores[0, 0] == pytest.approx(0.0)


def test_hand_arithmetic_case():
    # (1,2,2).(2,1,2) = 8, norms 3 and 3 -> 8/9
    a = dset([[1.0, 2.0, 2.0]])
    b = dset([[2.0, 1.0, 2.0]])
    assert cosine_similarity_matrix(a, b).scores[0, 0] == pytest.approx(8.0 / 9.0)


def test_dim_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine_similarity_matrix(dset([[1.0, 0.0]]), dset([[1.0, 0.0, 0.0]]))


def test_zero_norm_sentinel_row_and_column():
    rng = np.random.default_rng(0)
    a = np.vstack([rng.normal(size=(3, 4)), np.zeros(4)])
    b = np.vstack([np.zeros(4), rng.normal(size=(2, 4))])
    s = cosine_similarity_matrix(dset(a), dset(b)).scores
    np.testing.assert_array_equal(s[3, :], -1.0)
    np.testing.assert_array_equal(s[:, 0], -1.0)


def test_scale_invariance():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(6, 8))
    b = rng.normal(size=(5, 8))
    base = cosine_similarity_matrix(dset(a), dset(b)).scores
    scaled = a.copy()
    scaled[2] *= 37.5
    again = cosine_similarity_matrix(dset(scaled), dset(b)).scores
    assert np.abs(again - base).max() < 1e-9


def test_transpose_symmetry():
    rng = np.random.default_rng(2)
    a, b = dset(rng.normal(size=(7, 5))), dset(rng.normal(size=(4, 5)))
    ab = cosine_similarity_matrix(a, b).scores
    ba = cosine_similarity_matrix(b, a).scores
    assert np.abs(ab - ba.T).max() < 1e-12


def test_entries_within_unit_interval():
    rng = np.random.default_rng(3)
    a = dset(rng.normal(size=(30, 6)) * 100)
    s = cosine_similarity_matrix(a, a).scores
    assert np.abs(s).max() <= 1.0


def test_matrix_validation():
    with pytest.raises(ValueError):
        SimilarityMatrix(np.array([[1.5]]))
    with pytest.raises(ValueError):
        SimilarityMatrix(np.array([[np.inf]]))


def test_csv_dump_full_precision(tmp_path):
    rng = np.random.default_rng(4)
    sim = cosine_similarity_matrix(dset(rng.normal(size=(3, 5))),
                                   dset(rng.normal(size=(4, 5))))
    path = tmp_path / "sim.csv"
    save_similarity_csv(path, sim)
    back = np.loadtxt(path, delimiter=",")
    np.testing.assert_array_equal(back, sim.scores)
