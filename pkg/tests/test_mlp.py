import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glai import dataset as ds_mod
from glai.errors import BottleneckError, ConfigError, DimensionError, EqualWidthError, InvalidArchError
from glai.linalg import make_rng
from glai.mlp import (
    EarlyStopConfig,
    EarlyStopping,
    MlpModel,
    TrainConfig,
    evaluate,
    evaluate_outputs,
    fit,
    forward,
    forward_trace,
    loss_and_grads,
    new_mlp,
    pattern_forward,
    reduce_arch,
    run_epochs,
    train_epoch,
)


def _hand_forward(model, x):
    """Straight-line evaluation with explicit loops."""
    h = list(map(float, x))
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = [sum(w[i, j] * h[j] for j in range(len(h))) + b[i] for i in range(len(b))]
        h = [max(v, 0.0) for v in z] if l < len(model.weights) - 1 else z
    return np.array(h)


def test_new_mlp_shapes_and_determinism():
    a, b = new_mlp((2, 3, 2), 7), new_mlp((2, 3, 2), 7)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    m = new_mlp((4, 6, 3), 0)
    assert m.weights[0].shape == (6, 4) and m.weights[1].shape == (3, 6)
    assert all(not b.any() for b in m.biases)
    with pytest.raises(InvalidArchError):
        new_mlp((2,), 0)


def test_forward_examples():
    z = new_mlp((3, 4, 2), 0)
    for p in z.parameters():
        p[...] = 0
    assert not forward(z, [1.0, -2.0, 3.0]).any()
    aff = new_mlp((3, 2), 1)
    aff.biases[0][:] = [0.5, -1.0]
    x = np.array([1.0, -2.0, 0.5])
    assert np.allclose(forward(aff, x), aff.weights[0] @ x + aff.biases[0], atol=1e-15)
    m = new_mlp((3, 4, 2), 3)
    m.biases[0][:] = [0.1, -0.2, 0.3, 0.0]
    x = np.array([0.3, -1.2, 0.8])
    assert np.allclose(forward(m, x), _hand_forward(m, x), atol=1e-14)
    with pytest.raises(DimensionError):
        forward(m, [1.0, 2.0])


def test_forward_trace():
    m = new_mlp((2, 3, 2), 4)
    m.biases[0][:] = -100.0
    t = forward_trace(m, [0.5, 0.5])
    assert not t.pattern[0].any()
    assert np.allclose(t.output, m.biases[1])
    m = new_mlp((2, 3, 2), 4)
    x = np.array([0.7, -0.4])
    t = forward_trace(m, x)
    assert np.array_equal(t.output, forward(m, x))
    z1 = m.weights[0] @ x + m.biases[0]
    assert np.array_equal(t.pattern[0], (z1 > 0).astype(float))


def test_pattern_forward_special_patterns():
    m = new_mlp((2, 2, 1), 0)
    m.weights[0][:] = [[1.0, 0.5], [0.25, 1.0]]
    m.biases[0][:] = [0.2, 0.3]
    m.weights[1][:] = [[2.0, -1.0]]
    m.biases[1][:] = [0.7]
    x = np.array([1.0, 2.0])
    assert np.allclose(pattern_forward(m, [np.ones(2)], x), forward(m, x), atol=1e-15)
    # all gates closed: only the output bias survives
    assert np.allclose(pattern_forward(m, [np.zeros(2)], x), [0.7])
    # only neuron 0 open: W1[0,0]*(W0[0]·x + b0[0]) + b1
    assert np.allclose(pattern_forward(m, [np.array([1.0, 0.0])], x), [2.0 * (1.0 + 1.0 + 0.2) + 0.7])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pattern_forward_matches_forward(seed):
    m = new_mlp((3, 4, 4, 2), seed)
    for b in m.biases:
        b[:] = np.random.default_rng(seed).normal(size=b.shape) * 0.1
    x = np.random.default_rng(seed + 1).standard_normal(3)
    t = forward_trace(m, x)
    assert np.allclose(pattern_forward(m, t.pattern, x), forward(m, x), atol=1e-9, rtol=0)


def _fd_check(model, X, Y, loss, eps=1e-5):
    _, gw, gb = loss_and_grads(model, X, Y, loss)
    worst = 0.0
    for p, g in zip(model.parameters(), gw + gb):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = loss_and_grads(model, X, Y, loss)[0]
            p[idx] = orig - eps
            down = loss_and_grads(model, X, Y, loss)[0]
            p[idx] = orig
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(fd - g[idx]) / max(1e-6, abs(fd), abs(g[idx])))
    return worst


@pytest.mark.parametrize("loss", ["cross_entropy", "squared_error"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(loss, seed):
    m = new_mlp((2, 3, 2), seed)
    r = np.random.default_rng(seed)
    for b in m.biases:
        b[:] = r.normal(size=b.shape) * 0.3
    X = r.standard_normal((5, 2))
    Y = r.integers(0, 2, 5) if loss == "cross_entropy" else r.standard_normal((5, 2))
    assert _fd_check(m, X, Y, loss) <= 1e-4


def test_single_sample_affine_step_closed_form():
    m = new_mlp((3, 2), 0)
    x, y = np.array([1.0, -2.0, 0.5]), np.array([[0.3, -0.7]])
    W, b = m.weights[0].copy(), m.biases[0].copy()
    resid = W @ x + b - y[0]
    ds = ds_mod.Dataset(x[None], y, "regression", 2)
    cfg = TrainConfig(learning_rate=0.05, batch_size=1, weight_decay=0.0, loss="squared_error")
    train_epoch(m, ds, cfg, make_rng(0))
    assert np.allclose(m.weights[0], W - 0.05 * 2 * np.outer(resid, x), atol=1e-15)
    assert np.allclose(m.biases[0], b - 0.05 * 2 * resid, atol=1e-15)


def test_zero_learning_rate_leaves_parameters():
    d = ds_mod.gen_teacher(0, (3, 4, 2), 40)
    m = new_mlp((3, 4, 2), 9)
    before = [p.copy() for p in m.parameters()]
    cfg = TrainConfig(learning_rate=0.0, weight_decay=0.0, loss="squared_error")
    loss = train_epoch(m, d, cfg, make_rng(0))
    assert all(np.array_equal(p, q) for p, q in zip(before, m.parameters()))
    assert math.isclose(loss, evaluate(m, d, "squared_error")["loss"], rel_tol=1e-12)


def test_evaluate_examples():
    res = evaluate_outputs(np.zeros((4, 2)), np.array([0, 1, 0, 1]), "cross_entropy")
    assert res["accuracy"] == 0.5  # ties go to class 0
    assert abs(evaluate_outputs(np.zeros((3, 5)), np.array([0, 1, 4]), "cross_entropy")["loss"] - math.log(5)) < 1e-9
    d = ds_mod.gen_teacher(2, (3, 5, 2), 30)
    assert evaluate(new_mlp((3, 5, 2), 2), d, "squared_error")["loss"] == 0.0
    assert evaluate(new_mlp((3, 5, 2), 2), d, "squared_error")["accuracy"] is None


def _synthetic(values, max_epochs, monitor="val_loss", patience=2, min_delta=0.0):
    it = iter(values)
    cfg = TrainConfig(max_epochs=max_epochs, loss="squared_error",
                      early_stop=EarlyStopConfig(monitor, patience, min_delta))

    def validate():
        return {"loss": next(it), "accuracy": None}

    return run_epochs(lambda: 0.0, validate, lambda: None, cfg, "mlp")


def test_early_stopping_rules():
    assert _synthetic([1.0, 2.0, 3.0], 10, patience=0).epochs == 2
    assert _synthetic([5.0], 1).epochs == 1
    decreasing = [10.0 - i for i in range(8)]
    r = _synthetic(decreasing, 8)
    assert r.epochs == 8 and not r.stopped_early and r.best_epoch == 8
    r = _synthetic([3.0, 2.0, 2.5, 2.4, 9.0], 10, patience=2)
    assert r.epochs == 4 and r.best_epoch == 2 and r.stopped_early


def test_early_stopping_min_delta():
    s = EarlyStopping("val_accuracy", patience=1, min_delta=0.01)
    assert not s.update(0.5, 1)
    assert s.update(0.505, 2)  # improvement below min_delta counts as none
    assert s.best == 0.5


def test_val_accuracy_needs_classification():
    with pytest.raises(ConfigError):
        _synthetic([1.0], 1, monitor="val_accuracy")


def test_fit_keeps_best_snapshot_and_beats_majority():
    d = ds_mod.gen_teacher(11, (4, 16, 3), 600, task="classification")
    s = ds_mod.split(d, 0.25, 0)
    m = new_mlp((4, 16, 3), 0)
    cfg = TrainConfig(learning_rate=0.02, max_epochs=40)
    r = fit(m, s, cfg)
    best = evaluate(r.best_model, s.validation, "cross_entropy")["accuracy"]
    assert best == r.best_score
    majority = np.bincount(s.validation.targets).max() / len(s.validation)
    assert best > majority


def test_fit_deterministic():
    d = ds_mod.gen_teacher(1, (3, 6, 2), 100, task="classification")
    s = ds_mod.split(d, 0.2, 0)
    runs = [fit(new_mlp((3, 6, 2), 4), s, TrainConfig(learning_rate=0.01, max_epochs=5)) for _ in range(2)]
    assert [r.train_loss for r in runs[0].records] == [r.train_loss for r in runs[1].records]


def test_serialization_round_trip():
    m = new_mlp((3, 4, 2), 5)
    m.training_meta = {"note": "x"}
    back = MlpModel.from_json(m.to_json())
    assert back.to_json() == m.to_json()
    assert json.loads(m.to_json())["arch"] == [3, 4, 2]


def test_reduce_arch():
    assert reduce_arch((384, 256, 37), 0.7) == (384, 179, 37)
    assert reduce_arch((4, 6, 3), 0.5) == (4, 3, 3)
    assert reduce_arch((5, 2), 0.3) == (5, 2)
    with pytest.raises(BottleneckError):
        reduce_arch((10, 4, 8), 0.5)
    with pytest.raises(EqualWidthError):
        reduce_arch((3, 4, 4), 0.5)
    with pytest.raises(ConfigError):
        reduce_arch((4, 6, 3), 1.0)
