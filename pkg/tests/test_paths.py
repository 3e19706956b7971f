import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glai.errors import ArchMismatchError, DimensionError, EmptyHistoryError, PathCountOverflow
from glai.mlp import forward_trace, new_mlp
from glai.paths import (
    Path,
    PathTable,
    convergence_monitor,
    enumerate_paths,
    omega_subsample,
    pair_distance,
    path_contribution,
    path_count,
    path_distance,
    path_indicator,
    path_norm,
    path_weight,
    structural_metric,
)

from oracles import all_paths, brute_path_weight, brute_structural_metric, indicator, masks


def _with_biases(model, seed, scale=0.3):
    r = np.random.default_rng(seed)
    for b in model.biases:
        b[:] = r.normal(size=b.shape) * scale
    return model


def test_path_count_examples():
    c = path_count((2, 3, 2))
    assert (c["total"], c["per_output"], c["input"], c["bias"]) == (20, 10, 12, 8)
    assert path_count((1, 1))["total"] == 2
    c = path_count((4, 3, 3))
    assert (c["input"], c["bias"], c["total"]) == (36, 12, 48)
    assert path_count((3, 4, 4, 2))["per_output"] == 3 * 4 * 4 + (4 * 4 + 4 + 1)
    with pytest.raises(PathCountOverflow):
        path_count((10**6, 10**6, 10**6, 10**6))


@pytest.mark.parametrize("arch", [(2, 3, 2), (1, 1), (4, 3, 3), (3, 4, 4, 2), (2, 2, 3, 2, 1)])
def test_enumeration_matches_count(arch):
    paths = all_paths(arch)
    assert len(paths) == path_count(arch)["total"]
    assert len(set(paths)) == len(paths)
    assert [p.sort_key() for p in paths] == sorted(p.sort_key() for p in paths)
    for p in paths:
        p.check(arch)


def test_canonical_order_examples():
    first = next(enumerate_paths((2, 3, 2), 0))
    assert first == Path("input", 0, (0,), 0)
    assert list(enumerate_paths((1, 1), 0)) == [Path("input", 0, (), 0), Path("bias", 1, (), 0)]
    with pytest.raises(DimensionError):
        list(enumerate_paths((1, 1), 1))


@pytest.mark.parametrize("arch", [(2, 3, 2), (3, 4, 4, 2), (1, 1), (2, 1, 2, 3)])
def test_table_matches_enumeration(arch):
    m = _with_biases(new_mlp(arch, 3), 3)
    table = PathTable.from_model(m)
    assert table.paths() == all_paths(arch)
    expected = [brute_path_weight(m, p) for p in all_paths(arch)]
    assert np.allclose(table.weights, expected, rtol=1e-14, atol=0)
    back = PathTable.from_dict(table.to_dict())
    assert np.array_equal(back.nodes, table.nodes) and np.array_equal(back.weights, table.weights)


def test_path_weight_examples():
    m = new_mlp((2, 3, 2), 0)
    for w in m.weights:
        w[:] = 1.0
    assert path_weight(m, Path("input", 1, (2,), 0)) == 1.0
    m.weights[1][0, 2] = 0.0
    assert path_weight(m, Path("input", 1, (2,), 0)) == 0.0
    m = new_mlp((2, 3, 2), 5)
    assert path_weight(m, Path("input", 0, (1,), 0)) == m.weights[0][1, 0] * m.weights[1][0, 1]
    m.biases[0][2] = 0.75
    assert path_weight(m, Path("bias", 1, (2,), 1)) == 0.75 * m.weights[1][1, 2]
    with pytest.raises(DimensionError):
        path_weight(m, Path("input", 5, (0,), 0))


def test_indicator_and_contribution_examples():
    arch = (3, 2, 2, 2)
    ones, zeros = [np.ones(2), np.ones(2)], [np.zeros(2), np.zeros(2)]
    paths = all_paths(arch)
    assert all(path_indicator(ones, p) == 1 for p in paths)
    active = [p for p in paths if path_indicator(zeros, p)]
    assert active and all(p.kind == "bias" and p.origin == 3 for p in active)
    x = np.array([5.0, 6.0, 7.0])
    assert path_contribution(x, ones, Path("input", 2, (0, 1), 0)) == 7.0
    assert path_contribution(x, ones, Path("bias", 2, (1,), 0)) == 1.0
    assert path_contribution(x, zeros, Path("input", 2, (0, 1), 0)) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_indicator_is_product_of_gates(seed):
    m = _with_biases(new_mlp((2, 3, 3, 2), seed), seed)
    x = np.random.default_rng(seed).standard_normal(2)
    pattern = forward_trace(m, x).pattern
    for p in all_paths(m.arch):
        first = 1 if p.kind == "input" else p.origin
        prod = math.prod(pattern[first + j - 1][h] for j, h in enumerate(p.hidden))
        assert path_indicator(pattern, p) == prod


def test_path_norm_examples():
    m = new_mlp((2, 2, 1), 0)
    m.weights[0][:] = [[1.0, 0.0], [0.0, 1.0]]
    m.biases[0][:] = [10.0, -10.0]  # neuron 0 always on, neuron 1 always off
    omega = np.array([[1.0, 0.5], [-3.0, 0.2]])
    assert path_norm(m, Path("input", 0, (0,), 0), omega) == 2.0
    assert path_norm(m, Path("input", 0, (1,), 0), omega) == 0.0
    m.biases[0][:] = [0.0, 0.0]
    omega = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    # neuron 0 active on 3 of 4 samples
    assert path_norm(m, Path("bias", 1, (0,), 0), omega) == 0.75


def test_path_distance_examples_and_prop2_identity():
    a = _with_biases(new_mlp((3, 4, 2), 1), 1)
    b = _with_biases(new_mlp((3, 4, 2), 2), 2)
    X = np.random.default_rng(0).standard_normal((40, 3))
    for p in all_paths(a.arch):
        assert path_distance(a, a, p, X) == 0.0
        ca = np.array([path_contribution(x, forward_trace(a, x).pattern, p) for x in X])
        cb = np.array([path_contribution(x, forward_trace(b, x).pattern, p) for x in X])
        assert math.isclose(path_distance(a, b, p, X), np.abs(ca - cb).mean(), rel_tol=1e-12, abs_tol=1e-15)
    with pytest.raises(ArchMismatchError):
        path_distance(a, new_mlp((3, 5, 2), 0), Path("input", 0, (0,), 0), X)


def test_path_distance_saturates():
    a = new_mlp((1, 1, 1), 0)
    b = a.copy()
    a.weights[0][:] = 1.0
    b.weights[0][:] = -1.0
    X = np.array([[1.0], [-1.0]])
    assert path_distance(a, b, Path("input", 0, (0,), 0), X) == 1.0


def test_pair_distance_requires_same_origin():
    m = new_mlp((2, 3, 2), 0)
    X = np.ones((3, 2))
    assert pair_distance(m, Path("input", 0, (0,), 0), Path("input", 0, (0,), 1), X) == 0.0
    with pytest.raises(ValueError):
        pair_distance(m, Path("input", 0, (0,), 0), Path("input", 1, (0,), 0), X)


@pytest.mark.parametrize("arch", [(2, 3, 2), (3, 4, 4, 2), (1, 1), (4, 2, 3, 2, 2)])
def test_structural_metric_matches_brute_force(arch):
    a = _with_biases(new_mlp(arch, 1), 1)
    b = _with_biases(new_mlp(arch, 2), 2)
    X = np.random.default_rng(4).standard_normal((25, arch[0]))
    fast, slow = structural_metric(a, b, X), brute_structural_metric(a, b, X)
    assert math.isclose(fast, slow, rel_tol=1e-12, abs_tol=1e-15)
    assert structural_metric(a, a, X) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_structural_metric_bound(seed):
    arch = (3, 4, 4, 2)
    a, b = new_mlp(arch, seed), new_mlp(arch, seed + 1)
    X = np.random.default_rng(seed).standard_normal((10, 3))
    L = len(arch) - 2
    bound = max(np.abs(X).sum(axis=1) + L + 1)
    assert 0.0 <= structural_metric(a, b, X) <= bound


def test_convergence_monitor_examples():
    assert convergence_monitor([1.0, 0.5, 0.05, 0.04], window=2, rel_threshold=0.1) == {"converged": True, "epoch": 4}
    assert not convergence_monitor([0.3] * 10, 3, 0.5)["converged"]
    assert convergence_monitor([0.0, 0.0], 3, 0.1) == {"converged": True, "epoch": 1}
    with pytest.raises(EmptyHistoryError):
        convergence_monitor([])


def test_omega_subsample():
    X = np.arange(20.0).reshape(10, 2)
    assert np.array_equal(omega_subsample(X, 50, 0), X)
    s = omega_subsample(X, 4, 1)
    assert s.shape == (4, 2) and np.array_equal(s, omega_subsample(X, 4, 1))
    assert np.all(np.diff(s[:, 0]) > 0)


def test_oracle_masks_agree_with_trace():
    m = _with_biases(new_mlp((3, 4, 4, 2), 8), 8)
    X = np.random.default_rng(1).standard_normal((6, 3))
    for i, x in enumerate(X):
        pattern = forward_trace(m, x).pattern
        for l, mask in enumerate(masks(m, X)):
            assert np.array_equal(mask[i], pattern[l] > 0)
    p = Path("input", 0, (1, 2), 0)
    assert indicator(masks(m, X), p).shape == (6,)
