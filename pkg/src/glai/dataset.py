"""Dataset containers, CSV / IDX loaders, teacher-generated data and splits."""
import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .errors import (
    BadMagicError,
    ConfigError,
    CountMismatchError,
    DatasetError,
    InconsistentWidthError,
    ParseError,
    TruncatedFileError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Samples as an (n, input_dim) array plus targets.

    Classification targets are an int array of class indices in
    ``[0, n_outputs)``; regression targets are an (n, n_outputs) float array.
    """

    inputs: np.ndarray
    targets: np.ndarray
    task: str
    n_outputs: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] == 0:
            raise DatasetError("dataset needs a non-empty (n, input_dim) input array")
        if not np.all(np.isfinite(self.inputs)):
            raise DatasetError("dataset inputs must be finite")
        n = self.inputs.shape[0]
        if self.task == "classification":
            self.targets = np.asarray(self.targets, dtype=np.int64).reshape(n)
            if self.targets.min() < 0 or self.targets.max() >= self.n_outputs:
                raise DatasetError(f"class indices must lie in [0, {self.n_outputs})")
        elif self.task == "regression":
            self.targets = np.asarray(self.targets, dtype=np.float64).reshape(n, self.n_outputs)
        else:
            raise DatasetError(f"unknown task {self.task!r}")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def output_dim(self):
        return self.n_outputs

    @property
    def loss(self):
        return "cross_entropy" if self.task == "classification" else "squared_error"

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.targets[idx], self.task, self.n_outputs, dict(self.meta))


@dataclass
class Split:
    train: Dataset
    validation: Dataset
    seed: int
    train_index: np.ndarray
    validation_index: np.ndarray


def load_csv(path, label_columns=(-1,), feature_columns=None, header=False,
             task="classification", n_classes=None):
    """Read one sample per row.

    ``label_columns`` and ``feature_columns`` are column positions (negative
    positions count from the end); features default to every non-label
    column. ``header="auto"`` skips the first row when any cell in it is not
    a number. Values are not rescaled.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if header == "auto":
        header = bool(rows) and not all(_is_number(c) for c in rows[0])
    if header and rows:
        rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    width = len(rows[0])
    labels = [c % width for c in label_columns]
    if feature_columns is None:
        features = [c for c in range(width) if c not in labels]
    else:
        features = [c % width for c in feature_columns]
    if not features:
        raise DatasetError(f"{path}: no feature columns")
    first_row = 2 if header else 1
    X = np.empty((len(rows), len(features)))
    Y = np.empty((len(rows), len(labels)))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise InconsistentWidthError(
                f"{path}: row {i + first_row} has {len(row)} columns, expected {width}"
            )
        try:
            X[i] = [float(row[c]) for c in features]
            Y[i] = [float(row[c]) for c in labels]
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", row=i + first_row) from None
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ParseError(f"{path}: non-finite value")
    if task == "classification":
        if len(labels) != 1:
            raise ConfigError("classification needs exactly one label column")
        y = Y[:, 0]
        if np.any(y != np.round(y)) or np.any(y < 0):
            raise ParseError(f"{path}: class labels must be non-negative integers")
        y = y.astype(np.int64)
        k = int(n_classes) if n_classes is not None else int(y.max()) + 1
        return Dataset(X, y, "classification", k)
    return Dataset(X, Y, "regression", len(labels))


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def save_csv(ds, path, header=True):
    path = Path(path)
    n_feat = ds.input_dim
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            names = [f"x{i}" for i in range(n_feat)]
            names += ["label"] if ds.task == "classification" else [f"y{j}" for j in range(ds.n_outputs)]
            writer.writerow(names)
        for x, y in zip(ds.inputs, ds.targets):
            tail = [int(y)] if ds.task == "classification" else [repr(float(v)) for v in y]
            writer.writerow([repr(float(v)) for v in x] + tail)


def _read_idx(path, expected_magic):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: missing header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic {magic:#010x}, expected {expected_magic:#010x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise TruncatedFileError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    count = math.prod(dims)
    if len(data) - header_end < count:
        raise TruncatedFileError(f"{path}: expected {count} bytes of data, found {len(data) - header_end}")
    values = np.frombuffer(data, dtype=np.uint8, count=count, offset=header_end)
    return values.reshape(dims)


def load_idx(images_path, labels_path):
    """Load an IDX image/label pair (MNIST layout); pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return Dataset(X, y, "classification", int(y.max()) + 1)


def gen_teacher(seed, arch, n_samples, noise_std=0.0, task="regression"):
    """Standard-normal inputs labelled by ``new_mlp(arch, seed)``.

    Regression targets get additive Gaussian noise; classification targets
    are the argmax of the teacher outputs.
    """
    from .mlp import forward, new_mlp

    if n_samples <= 0:
        raise ConfigError("n_samples must be positive")
    if noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    teacher = new_mlp(arch, seed)
    rng = linalg.make_rng([int(seed), 1])
    X = rng.standard_normal((int(n_samples), teacher.arch[0]))
    out = forward(teacher, X)
    meta = {"source": "teacher", "seed": int(seed), "arch": list(teacher.arch), "noise_std": noise_std}
    if task == "classification":
        return Dataset(X, np.argmax(out, axis=1), "classification", teacher.arch[-1], meta)
    if task != "regression":
        raise ConfigError(f"unknown task {task!r}")
    if noise_std > 0:
        out = out + noise_std * rng.standard_normal(out.shape)
    return Dataset(X, out, "regression", teacher.arch[-1], meta)


def split(ds, val_fraction, seed):
    """Seeded shuffle into train / validation; validation gets round(f*n), at least 1."""
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(ds)
    n_val = max(1, int(math.floor(val_fraction * n + 0.5)))
    if n_val >= n:
        raise ConfigError(f"cannot split {n} samples with val_fraction={val_fraction}")
    order = linalg.make_rng(seed).permutation(n)
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    return Split(ds.subset(train_idx), ds.subset(val_idx), int(seed), train_idx, val_idx)
