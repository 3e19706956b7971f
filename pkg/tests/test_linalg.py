import numpy as np
import pytest

from glai import linalg
from glai.errors import DimensionError


def test_mat_vec_examples():
    assert np.array_equal(linalg.mat_vec(np.eye(2), [3, 4]), [3, 4])
    assert np.array_equal(linalg.mat_vec(np.zeros((2, 3)), [1, 1, 1]), [0, 0])
    # 1*1 + 2*1, 3*1 + 4*1
    assert np.array_equal(linalg.mat_vec([[1, 2], [3, 4]], [1, 1]), [3, 7])


def test_mat_vec_dimension_check():
    with pytest.raises(DimensionError):
        linalg.mat_vec(np.ones((2, 3)), [1, 1])


def test_relu_and_mask():
    assert np.array_equal(linalg.relu([-1, 0, 2]), [0, 0, 2])
    assert np.array_equal(linalg.relu(np.zeros(4)), np.zeros(4))
    assert np.array_equal(linalg.relu([5]), [5])
    assert np.array_equal(linalg.relu_mask([-1, 0, 2]), [0, 0, 1])
    assert np.array_equal(linalg.relu_mask([3, 4]), [1, 1])
    assert np.array_equal(linalg.relu_mask([-0.0]), [0])


def test_rand_matrix_determinism_and_scale():
    a = linalg.rand_matrix(linalg.make_rng(0), 2, 2, 1.0)
    b = linalg.rand_matrix(linalg.make_rng(0), 2, 2, 1.0)
    c = linalg.rand_matrix(linalg.make_rng(1), 2, 2, 1.0)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        linalg.rand_matrix(linalg.make_rng(0), 2, 2, 0.0)


def test_rand_matrix_std_matches_scale():
    m = linalg.rand_matrix(linalg.make_rng(3), 400, 400, 0.5)
    assert abs(m.std() - 0.5) < 0.01
    assert abs(m.mean()) < 0.01
