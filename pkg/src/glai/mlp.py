"""ReLU multilayer perceptrons: evaluation, activation tracing and SGD training."""
import copy
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linalg
from .errors import (
    BottleneckError,
    ConfigError,
    DimensionError,
    DivergenceError,
    EqualWidthError,
    InvalidArchError,
)

FORMAT_VERSION = 1
LOSSES = ("cross_entropy", "squared_error")
MONITORS = ("val_accuracy", "val_loss")


def check_arch(arch):
    """Validate ``arch`` and return it as a tuple of ints."""
    try:
        dims = tuple(int(d) for d in arch)
    except (TypeError, ValueError) as exc:
        raise InvalidArchError(f"architecture must be a sequence of ints: {arch!r}") from exc
    if len(dims) < 2:
        raise InvalidArchError(f"architecture needs at least input and output dims, got {dims}")
    if any(d < 1 for d in dims):
        raise InvalidArchError(f"all layer dims must be >= 1, got {dims}")
    if any(int(d) != d for d in arch):
        raise InvalidArchError(f"layer dims must be integers, got {arch!r}")
    return dims


def n_hidden(arch):
    return len(arch) - 2


@dataclass
class MlpModel:
    arch: tuple
    weights: list
    biases: list
    seed: Optional[int] = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arch = check_arch(self.arch)
        if len(self.weights) != len(self.arch) - 1 or len(self.biases) != len(self.arch) - 1:
            raise DimensionError("need exactly one weight matrix and bias per affine layer")
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.arch[l + 1], self.arch[l])
            if w.shape != expected or b.shape != (self.arch[l + 1],):
                raise DimensionError(
                    f"layer {l}: weight {w.shape} / bias {b.shape} do not match {expected}"
                )

    @property
    def n_hidden(self):
        return len(self.arch) - 2

    def copy(self):
        return copy.deepcopy(self)

    def parameters(self):
        return list(self.weights) + list(self.biases)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "arch": list(self.arch),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "seed": self.seed,
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
        return cls(
            arch=tuple(d["arch"]),
            weights=[np.array(w, dtype=np.float64).reshape(len(w), -1) for w in d["weights"]],
            biases=[np.array(b, dtype=np.float64) for b in d["biases"]],
            seed=d.get("seed"),
            training_meta=d.get("training_meta") or {},
        )

    def to_json(self):
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class ForwardTrace:
    output: np.ndarray
    pattern: list  # act_l for l = 1..L, as float 0/1 vectors
    pre_activations: list  # f_{l-1}(x) for l = 1..L


@dataclass
class EarlyStopConfig:
    monitor: str = "val_accuracy"
    patience: int = 5
    min_delta: float = 1e-3


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    weight_decay: float = 1e-3
    max_epochs: int = 100
    seed: int = 0
    loss: str = "cross_entropy"
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)

    def __post_init__(self):
        if isinstance(self.early_stop, dict):
            self.early_stop = EarlyStopConfig(**self.early_stop)
        self.validate()

    def validate(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ConfigError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.early_stop.monitor not in MONITORS:
            raise ConfigError(f"monitor must be one of {MONITORS}")
        if self.early_stop.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.early_stop.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")

    def to_dict(self):
        d = dict(self.__dict__)
        d["early_stop"] = dict(self.early_stop.__dict__)
        return d


def new_mlp(arch, seed):
    """He-initialized weights (std sqrt(2/fan_in)), zero biases."""
    arch = check_arch(arch)
    rng = linalg.make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        weights.append(linalg.rand_matrix(rng, fan_out, fan_in, math.sqrt(2.0 / fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(arch=arch, weights=weights, biases=biases, seed=int(seed))


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (model.arch[0],) or x.ndim not in (1, 2):
        raise DimensionError(f"input shape {x.shape} does not match input dim {model.arch[0]}")
    return x


def forward(model, x):
    """Evaluate the network on one vector or on a (batch, n_0) matrix."""
    x = _check_input(model, x)
    if x.ndim == 1:
        # same kernel as trace_batch so traced outputs match bit for bit
        return forward(model, x[None, :])[0]
    h = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if l < last:
            h = np.maximum(h, 0.0)
    return h


def trace_batch(model, X):
    """Outputs and per-hidden-layer activation masks for a batch.

    Returns ``(outputs, acts, pre)`` where ``acts[l-1]`` is a (batch, n_l)
    uint8 mask for hidden layer ``l``.
    """
    X = np.atleast_2d(_check_input(model, X))
    h = X
    acts, pre = [], []
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        if l < last:
            pre.append(z)
            acts.append((z > 0.0).astype(np.uint8))
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, acts, pre


def forward_trace(model, x):
    x = linalg.as_vector(_check_input(model, x))
    out, acts, pre = trace_batch(model, x[None, :])
    return ForwardTrace(
        output=out[0],
        pattern=[a[0].astype(np.float64) for a in acts],
        pre_activations=[z[0] for z in pre],
    )


def pattern_forward(model, pattern, x):
    """Evaluate the bias-augmented product W_L D_L ... W_1 D_1 W_0 [x; 1].

    ``pattern`` fixes the diagonal gates, so the result is the linear map of
    that activation region applied to ``x`` whether or not ``x`` lies in it.
    """
    x = linalg.as_vector(_check_input(model, x))
    if len(pattern) != model.n_hidden:
        raise DimensionError(f"pattern has {len(pattern)} layers, model has {model.n_hidden}")
    for l, a in enumerate(pattern):
        if len(a) != model.arch[l + 1]:
            raise DimensionError(f"pattern layer {l + 1} has length {len(a)}, expected {model.arch[l + 1]}")

    def augmented(l):
        w, b = model.weights[l], model.biases[l]
        top = np.hstack([w, b[:, None]])
        bottom = np.zeros((1, w.shape[1] + 1))
        bottom[0, -1] = 1.0
        return np.vstack([top, bottom])

    product = augmented(0)
    for l, a in enumerate(pattern, start=1):
        gate = np.diag(np.append(np.asarray(a, dtype=np.float64), 1.0))
        product = augmented(l) @ gate @ product
    return (product @ np.append(x, 1.0))[:-1]


# --- losses -----------------------------------------------------------------


def loss_and_output_grad(outputs, targets, loss):
    """Mean loss over the batch and its gradient w.r.t. the outputs.

    Cross-entropy treats outputs as logits and ``targets`` as class indices.
    Squared error is ``||y_hat - y||^2`` per sample.
    """
    n = outputs.shape[0]
    if loss == "cross_entropy":
        targets = np.asarray(targets, dtype=np.int64)
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        per_sample = log_z - shifted[np.arange(n), targets]
        probs = np.exp(shifted - log_z[:, None])
        probs[np.arange(n), targets] -= 1.0
        return float(per_sample.mean()), probs / n
    if loss == "squared_error":
        diff = outputs - np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
        return float((diff**2).sum(axis=1).mean()), 2.0 * diff / n
    raise ConfigError(f"unknown loss {loss!r}")


def per_sample_loss(outputs, targets, loss):
    if loss == "cross_entropy":
        targets = np.asarray(targets, dtype=np.int64)
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        return log_z - shifted[np.arange(outputs.shape[0]), targets]
    diff = outputs - np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
    return (diff**2).sum(axis=1)


def loss_and_grads(model, X, Y, loss):
    """Mean batch loss and its gradients w.r.t. every weight and bias."""
    X = np.atleast_2d(_check_input(model, X))
    hs = [X]
    zs = []
    last = len(model.weights) - 1
    h = X
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        zs.append(z)
        h = np.maximum(z, 0.0) if l < last else z
        hs.append(h)
    value, g = loss_and_output_grad(h, Y, loss)
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for l in range(last, -1, -1):
        if l < last:
            g = g * (zs[l] > 0.0)
        grads_w[l] = g.T @ hs[l]
        grads_b[l] = g.sum(axis=0)
        if l > 0:
            g = g @ model.weights[l]
    return value, grads_w, grads_b


def sgd_step(params, grads, lr, weight_decay):
    """In-place decoupled-decay update: p <- p - lr * (grad + weight_decay * p)."""
    for p, g in zip(params, grads):
        p -= lr * (g + weight_decay * p)


def _check_dataset(model, ds):
    if ds.input_dim != model.arch[0]:
        raise DimensionError(f"dataset input dim {ds.input_dim} != model input dim {model.arch[0]}")
    if ds.output_dim != model.arch[-1]:
        raise DimensionError(f"dataset output dim {ds.output_dim} != model output dim {model.arch[-1]}")


def minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_epoch(model, train, cfg, rng):
    """One shuffled pass of mini-batch SGD; returns the mean per-sample loss."""
    _check_dataset(model, train)
    total = 0.0
    for idx in minibatches(len(train), cfg.batch_size, rng):
        value, gw, gb = loss_and_grads(model, train.inputs[idx], train.targets[idx], cfg.loss)
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite training loss {value}")
        total += value * len(idx)
        sgd_step(model.parameters(), gw + gb, cfg.learning_rate, cfg.weight_decay)
    return total / len(train)


def evaluate_outputs(outputs, targets, loss):
    value = float(per_sample_loss(outputs, targets, loss).mean())
    accuracy = None
    if loss == "cross_entropy":
        # np.argmax returns the lowest index on ties
        accuracy = float((np.argmax(outputs, axis=1) == np.asarray(targets)).mean())
    return {"loss": value, "accuracy": accuracy}


def evaluate(model, ds, loss):
    _check_dataset(model, ds)
    return evaluate_outputs(forward(model, ds.inputs), ds.targets, loss)


# --- early stopping and the epoch loop ---------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: Optional[float]
    seconds: float
    phase: str = "mlp"
    m_t: Optional[float] = None

    def to_dict(self):
        return dict(self.__dict__)


class EarlyStopping:
    """Patience counter measured against the best value seen so far."""

    def __init__(self, monitor="val_accuracy", patience=5, min_delta=0.0):
        self.maximize = monitor == "val_accuracy"
        self.patience = patience
        self.min_delta = min_delta
        self.best = None
        self.best_epoch = None
        self.wait = 0

    def update(self, value, epoch):
        """Record ``value``; return True when training should stop."""
        if self.best is None or self.improves(value):
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    def improves(self, value):
        if self.maximize:
            return value > self.best + self.min_delta
        return value < self.best - self.min_delta


@dataclass
class FitResult:
    records: list
    best_epoch: int
    best_score: float
    best_model: object
    stopped_early: bool

    @property
    def epochs(self):
        return len(self.records)


def monitored_value(record, monitor):
    return record.val_accuracy if monitor == "val_accuracy" else record.val_loss


def run_epochs(step: Callable, validate: Callable, snapshot: Callable, cfg, phase, on_epoch=None):
    """Shared early-stopped training loop.

    ``step()`` runs one training epoch and returns its loss, ``validate()``
    returns ``{"loss", "accuracy"}`` and ``snapshot()`` copies the model.
    """
    es = cfg.early_stop
    if es.monitor == "val_accuracy" and cfg.loss != "cross_entropy":
        raise ConfigError("val_accuracy can only be monitored for classification")
    stopper = EarlyStopping(es.monitor, es.patience, es.min_delta)
    records = []
    best_model = None
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        train_loss = step()
        metrics = validate()
        seconds = time.perf_counter() - t0
        rec = EpochRecord(epoch, train_loss, metrics["loss"], metrics["accuracy"], seconds, phase)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        stop = stopper.update(monitored_value(rec, es.monitor), epoch)
        if stopper.best_epoch == epoch:
            best_model = snapshot()
        if stop:
            stopped = True
            break
    return FitResult(records, stopper.best_epoch, stopper.best, best_model, stopped)


def fit(model, split, cfg, on_epoch=None):
    """Train ``model`` in place with early stopping on the validation set."""
    _check_dataset(model, split.train)
    rng = linalg.make_rng(cfg.seed)
    return run_epochs(
        step=lambda: train_epoch(model, split.train, cfg, rng),
        validate=lambda: evaluate(model, split.validation, cfg.loss),
        snapshot=model.copy,
        cfg=cfg,
        phase="mlp",
        on_epoch=on_epoch,
    )


# --- architecture reduction ---------------------------------------------------


def round_half_up(value):
    return int(math.floor(value + 0.5))


def reduce_arch(arch, rho):
    """Shrink every hidden layer by ``rho`` (round half up, at least 1 unit)."""
    arch = check_arch(arch)
    if not 0 < rho < 1:
        raise ConfigError(f"rho must lie in (0, 1), got {rho}")
    if len(arch) == 2:
        return arch
    if arch[-2] == arch[-1]:
        raise EqualWidthError(
            f"last hidden width equals output width ({arch[-1]}); reduction is undefined"
        )
    hidden = tuple(max(1, round_half_up(rho * n)) for n in arch[1:-1])
    if hidden[-1] < arch[-1]:
        raise BottleneckError(
            f"reduced last hidden layer has {hidden[-1]} units, fewer than {arch[-1]} outputs"
        )
    return (arch[0],) + hidden + (arch[-1],)
