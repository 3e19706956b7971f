"""Paths through a ReLU MLP and the quantities defined on them.

A path starts either at an input coordinate or at the bias unit feeding
hidden layer ``k`` (``k = L+1`` is the output bias), passes through one
neuron per remaining hidden layer and ends at one output neuron. Paths that
would route through the constant rows of the bias-augmented matrices are
always zero and are never enumerated.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ArchMismatchError, DimensionError, EmptyHistoryError, PathCountOverflow
from .mlp import check_arch, trace_batch

FORMAT_VERSION = 1
INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class Path:
    kind: str  # "input" or "bias"
    origin: int  # input coordinate, or bias layer k in [1, L+1]
    hidden: tuple  # neurons of the traversed hidden layers, in layer order
    output: int

    def __post_init__(self):
        if self.kind not in ("input", "bias"):
            raise ValueError(f"unknown origin kind {self.kind!r}")

    @property
    def start_layer(self):
        return 0 if self.kind == "input" else self.origin

    def sort_key(self):
        return (self.output, 0 if self.kind == "input" else 1, self.origin, self.hidden)

    def check(self, arch):
        L = len(arch) - 2
        if self.kind == "input":
            ok = 0 <= self.origin < arch[0] and len(self.hidden) == L
            first = 1
        else:
            ok = 1 <= self.origin <= L + 1 and len(self.hidden) == L + 1 - self.origin
            first = self.origin
        ok = ok and 0 <= self.output < arch[-1]
        ok = ok and all(0 <= h < arch[first + j] for j, h in enumerate(self.hidden))
        if not ok:
            raise DimensionError(f"{self} is not a valid path of {tuple(arch)}")
        return self

    def __str__(self):
        head = f"x{self.origin}" if self.kind == "input" else f"b{self.origin}"
        return "->".join([head] + [f"h{h}" for h in self.hidden] + [f"y{self.output}"])


def _origin_counts(arch):
    arch = check_arch(arch)
    hidden = arch[1:-1]
    input_paths = arch[0] * math.prod(hidden)
    bias_paths = sum(math.prod(arch[k:-1]) for k in range(1, len(arch)))
    return input_paths, bias_paths


def path_count(arch):
    """Closed-form path counts; exact integers, overflow reported past int64."""
    arch = check_arch(arch)
    per_in, per_bias = _origin_counts(arch)
    per_output = per_in + per_bias
    total = per_output * arch[-1]
    if total > INT64_MAX:
        raise PathCountOverflow(f"{tuple(arch)} has {total} paths, more than int64 can index")
    return {
        "per_output": per_output,
        "total": total,
        "input": per_in * arch[-1],
        "bias": per_bias * arch[-1],
    }


def enumerate_paths(arch, output_i):
    """Yield every path ending at ``output_i`` in canonical order."""
    arch = check_arch(arch)
    if not 0 <= output_i < arch[-1]:
        raise DimensionError(f"output index {output_i} out of range for {arch}")
    L = len(arch) - 2
    hidden_ranges = [range(n) for n in arch[1:-1]]
    for i in range(arch[0]):
        for h in itertools.product(*hidden_ranges):
            yield Path("input", i, tuple(h), output_i)
    for k in range(1, L + 2):
        for h in itertools.product(*hidden_ranges[k - 1:]):
            yield Path("bias", k, tuple(h), output_i)


def _grid(dims):
    """All index tuples over ``dims`` in lexicographic order, shape (count, len(dims))."""
    if not dims:
        return np.zeros((1, 0), dtype=np.int64)
    return np.indices(dims, dtype=np.int64).reshape(len(dims), -1).T


def _canonical_nodes(arch):
    """Packed (nodes, start) arrays for every path, canonical order."""
    L = len(arch) - 2
    width = L + 2
    hidden = list(arch[1:-1])
    blocks_nodes, blocks_start = [], []
    per_output = []
    g = _grid([arch[0]] + hidden)
    rows = np.full((g.shape[0], width), -1, dtype=np.int64)
    rows[:, :L + 1] = g
    per_output.append((rows, np.zeros(g.shape[0], dtype=np.int64)))
    for k in range(1, L + 2):
        g = _grid(hidden[k - 1:])
        rows = np.full((g.shape[0], width), -1, dtype=np.int64)
        rows[:, k:L + 1] = g
        per_output.append((rows, np.full(g.shape[0], k, dtype=np.int64)))
    template = np.vstack([r for r, _ in per_output])
    template_start = np.concatenate([s for _, s in per_output])
    for o in range(arch[-1]):
        block = template.copy()
        block[:, L + 1] = o
        blocks_nodes.append(block)
        blocks_start.append(template_start)
    return np.vstack(blocks_nodes), np.concatenate(blocks_start)


class PathTable:
    """Paths (packed arrays, canonical order) with one real weight each."""

    def __init__(self, arch, nodes, start, weights):
        self.arch = check_arch(arch)
        self.nodes = np.ascontiguousarray(nodes, dtype=np.int64)
        self.start = np.ascontiguousarray(start, dtype=np.int64)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self._selector = None
        if self.nodes.shape != (len(self.start), len(self.arch)) or self.weights.shape != self.start.shape:
            raise DimensionError("inconsistent path table arrays")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("path weights must be finite")

    @classmethod
    def full(cls, arch, weights=None):
        arch = check_arch(arch)
        path_count(arch)
        nodes, start = _canonical_nodes(arch)
        if weights is None:
            weights = np.zeros(len(start))
        return cls(arch, nodes, start, weights)

    @classmethod
    def from_model(cls, model):
        table = cls.full(model.arch)
        table.weights = _kernels.path_weights(*_kernels.pack_params(model.weights, model.biases),
                                              table.nodes, table.start)
        return table

    def __len__(self):
        return len(self.start)

    def selector_arrays(self):
        """(cols, origin, out) arrays for the selector kernels, cached."""
        if getattr(self, "_selector", None) is None:
            self._selector = _kernels.selector_arrays(self.arch, self.nodes, self.start)
        return self._selector

    @property
    def outputs(self):
        return self.nodes[:, -1]

    def per_output_counts(self):
        return np.bincount(self.outputs, minlength=self.arch[-1])

    def path(self, p):
        L = len(self.arch) - 2
        s = int(self.start[p])
        row = self.nodes[p]
        hidden = tuple(int(h) for h in row[max(s, 1):L + 1])
        if s == 0:
            return Path("input", int(row[0]), hidden, int(row[L + 1]))
        return Path("bias", s, hidden, int(row[L + 1]))

    def paths(self):
        return [self.path(p) for p in range(len(self))]

    def subset(self, idx, weights=None):
        idx = np.asarray(idx, dtype=np.int64)
        w = self.weights[idx] if weights is None else weights
        return PathTable(self.arch, self.nodes[idx], self.start[idx], w)

    def to_dict(self):
        outputs = [[] for _ in range(self.arch[-1])]
        for p in range(len(self)):
            path = self.path(p)
            outputs[path.output].append(
                [{"kind": path.kind, "index": path.origin}, list(path.hidden), float(self.weights[p])]
            )
        return {"format_version": FORMAT_VERSION, "arch": list(self.arch), "outputs": outputs}

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported path table format_version {d.get('format_version')!r}")
        arch = check_arch(d["arch"])
        L = len(arch) - 2
        rows, starts, weights = [], [], []
        for o, entries in enumerate(d["outputs"]):
            for origin, hidden, weight in entries:
                path = Path(origin["kind"], int(origin["index"]), tuple(hidden), o).check(arch)
                row = [-1] * (L + 2)
                if path.kind == "input":
                    row[0] = path.origin
                row[max(path.start_layer, 1):L + 1] = list(path.hidden)
                row[L + 1] = o
                rows.append(row)
                starts.append(path.start_layer)
                weights.append(weight)
        nodes = np.array(rows, dtype=np.int64).reshape(len(rows), L + 2)
        return cls(arch, nodes, np.array(starts, dtype=np.int64), np.array(weights, dtype=np.float64))


# --- single-path quantities -----------------------------------------------------


def path_weight(model, path):
    """Product of the weights along ``path`` (a bias entry first for bias origins)."""
    path.check(model.arch)
    L = model.n_hidden
    route = list(path.hidden) + [path.output]
    if path.kind == "input":
        value, prev, layer = 1.0, path.origin, 0
    else:
        k = path.origin
        value, prev, layer = float(model.biases[k - 1][route[0]]), route[0], k
        route = route[1:]
    for nxt in route:
        value *= float(model.weights[layer][nxt, prev])
        prev, layer = nxt, layer + 1
    assert layer == L + 1
    return value


def _traversed(path):
    first = 1 if path.kind == "input" else path.origin
    return [(first + j, h) for j, h in enumerate(path.hidden)]


def path_indicator(pattern, path):
    """1 when every hidden neuron on ``path`` is active in ``pattern``."""
    for layer, h in _traversed(path):
        if not pattern[layer - 1][h] > 0:
            return 0
    return 1


def path_contribution(x, pattern, path):
    if not path_indicator(pattern, path):
        return 0.0
    return float(x[path.origin]) if path.kind == "input" else 1.0


def as_omega(omega, input_dim=None):
    X = np.atleast_2d(np.asarray(omega, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("reference set must be non-empty")
    if input_dim is not None and X.shape[1] != input_dim:
        raise DimensionError(f"reference samples have dim {X.shape[1]}, expected {input_dim}")
    return X


def _indicator_over(model, X, path):
    _, acts, _ = trace_batch(model, X)
    ind = np.ones(X.shape[0], dtype=bool)
    for layer, h in _traversed(path):
        ind &= acts[layer - 1][:, h] > 0
    return ind


def _origin_magnitude(X, path):
    return np.abs(X[:, path.origin]) if path.kind == "input" else np.ones(X.shape[0])


def path_norm(model, path, omega):
    """Mean over the reference set of |c_path(x)|."""
    path.check(model.arch)
    X = as_omega(omega, model.arch[0])
    return float((_origin_magnitude(X, path) * _indicator_over(model, X, path)).mean())


def _check_same_arch(a, b):
    if tuple(a.arch) != tuple(b.arch):
        raise ArchMismatchError(f"architectures differ: {a.arch} vs {b.arch}")


def path_distance(model_a, model_b, path, omega):
    """Mean |x_origin| over samples where the path's indicator differs between snapshots."""
    _check_same_arch(model_a, model_b)
    path.check(model_a.arch)
    X = as_omega(omega, model_a.arch[0])
    differ = _indicator_over(model_a, X, path) != _indicator_over(model_b, X, path)
    return float((_origin_magnitude(X, path) * differ).mean())


def pair_distance(model, path_a, path_b, omega):
    """Distance between two paths of one model sharing the same origin."""
    if (path_a.kind, path_a.origin) != (path_b.kind, path_b.origin):
        raise ValueError("path distance is only defined for paths with the same origin")
    X = as_omega(omega, model.arch[0])
    differ = _indicator_over(model, X, path_a) != _indicator_over(model, X, path_b)
    return float((_origin_magnitude(X, path_a) * differ).mean())


# --- structural convergence -------------------------------------------------------


def structural_metric(model_prev, model_curr, omega):
    """Mean path distance between two snapshots, averaged over all paths.

    For a fixed sample and origin, the hidden tuples whose active/inactive
    status differs number N_a + N_b - 2 N_ab, where each N is a product of
    per-layer active counts (under a, under b, under both). That turns the
    sum over exponentially many paths into a few products per sample.
    """
    _check_same_arch(model_prev, model_curr)
    arch = model_prev.arch
    X = as_omega(omega, arch[0])
    _, acts_a, _ = trace_batch(model_prev, X)
    _, acts_b, _ = trace_batch(model_curr, X)
    L = len(arch) - 2
    n = X.shape[0]
    # suffix[k] = prod of counts over hidden layers k..L, for k = 1..L+1
    counts = {
        "a": [a.sum(axis=1).astype(np.float64) for a in acts_a],
        "b": [b.sum(axis=1).astype(np.float64) for b in acts_b],
        "ab": [(a & b).sum(axis=1).astype(np.float64) for a, b in zip(acts_a, acts_b)],
    }
    suffix = {}
    for key, cs in counts.items():
        s = [np.ones(n)]
        for c in reversed(cs):
            s.append(s[-1] * c)
        suffix[key] = s[::-1]  # suffix[key][k-1] covers layers k..L
    differing = [suffix["a"][j] + suffix["b"][j] - 2.0 * suffix["ab"][j] for j in range(L + 1)]
    input_term = np.abs(X).sum(axis=1) * differing[0]
    bias_term = sum(differing[k - 1] for k in range(1, L + 2))
    total = arch[-1] * (input_term + bias_term).sum()
    return float(total / (path_count(arch)["total"] * n))


def convergence_monitor(history, window=3, rel_threshold=0.1):
    """First epoch (1-based) where the last ``window`` values all sit within
    ``rel_threshold`` of the first value."""
    history = [float(v) for v in history]
    if not history:
        raise EmptyHistoryError("m_t history is empty")
    if window < 1 or not rel_threshold > 0:
        raise ValueError("window must be >= 1 and rel_threshold > 0")
    first = history[0]
    if first == 0.0:
        return {"converged": True, "epoch": 1}
    for t in range(window, len(history) + 1):
        if max(history[t - window:t]) / first <= rel_threshold:
            return {"converged": True, "epoch": t}
    return {"converged": False, "epoch": None}


def omega_subsample(X, max_samples, seed):
    """Seeded subsample of at most ``max_samples`` rows, original order kept."""
    X = np.asarray(X, dtype=np.float64)
    if max_samples < 1:
        raise ValueError("max_samples must be >= 1")
    if X.shape[0] <= max_samples:
        return X.copy()
    idx = np.sort(np.random.default_rng(int(seed)).choice(X.shape[0], size=max_samples, replace=False))
    return X[idx]
