"""Dense float64 helpers and seeded randomness.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64;
the functions here only add the shape checks and conventions the rest of
the package relies on.
"""
import numpy as np

from .errors import DimensionError

DTYPE = np.float64


def as_vector(v):
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def as_matrix(m):
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def make_rng(seed):
    """Return a generator whose draw sequence depends only on ``seed``.

    ``seed`` may be an int or a sequence of ints (an independent stream per tuple).
    """
    if isinstance(seed, (list, tuple)):
        return np.random.default_rng([int(s) for s in seed])
    return np.random.default_rng(int(seed))


def mat_vec(m, v):
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} matrix by length-{v.shape[0]} vector")
    return m @ v


def relu(v):
    return np.maximum(np.asarray(v, dtype=DTYPE), 0.0)


def relu_mask(v):
    # strict: exact zeros (including -0.0) are inactive
    return (np.asarray(v, dtype=DTYPE) > 0.0).astype(DTYPE)


def rand_matrix(rng, rows, cols, scale):
    """Zero-mean uniform entries with standard deviation ``scale``.

    The uniform half-width is ``sqrt(3) * scale`` so that the standard
    deviation equals ``scale`` exactly.
    """
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    half_width = np.sqrt(3.0) * scale
    return rng.uniform(-half_width, half_width, size=(int(rows), int(cols)))
