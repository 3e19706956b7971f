"""GLAI models: a frozen MLP that selects paths plus a linear estimator over them."""
import copy
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import _kernels, linalg
from .errors import (
    DimensionError,
    DivergenceError,
    PathBudgetExceeded,
    ReducedNotSmallerError,
    SigmaOutOfRangeError,
)
from .mlp import (
    MlpModel,
    _check_dataset,
    check_arch,
    evaluate_outputs,
    loss_and_output_grad,
    minibatches,
    reduce_arch,
    run_epochs,
    trace_batch,
)
from .paths import PathTable, as_omega, path_count

FORMAT_VERSION = 1
DEFAULT_PATH_BUDGET = 10**7


# --- parameter accounting -------------------------------------------------------


def param_count_original(arch):
    arch = check_arch(arch)
    return sum((arch[l] + 1) * arch[l + 1] for l in range(len(arch) - 1))


def param_count_reduced(arch, rho):
    return param_count_original(reduce_arch(arch, rho))


def estimator_size(arch, rho):
    return path_count(reduce_arch(arch, rho))["total"]


def reduced_count_closed_form(arch, rho):
    """Real-valued reduced-parameter formula with unrounded widths (diagnostic only)."""
    n = check_arch(arch)
    L = len(n) - 2
    linear = n[0] * n[1] + n[L] * n[L + 1] + sum(n[l + 1] for l in range(L + 1))
    quadratic = sum(n[l] * n[l + 1] for l in range(1, L))
    return rho * linear + rho**2 * quadratic + n[L + 1]


def estimator_count_closed_form(arch, rho):
    """Real-valued estimator-size formula with unrounded widths (diagnostic only)."""
    n = check_arch(arch)
    L = len(n) - 2
    head = rho**L * math.prod(n)
    tail = sum(rho ** (L + 1 - k) * math.prod(n[k:]) for k in range(1, L + 2))
    return head + tail


def retained_count(sigma, total):
    # guard against sigma*total landing a hair above an integer
    return min(total, max(1, math.ceil(round(sigma * total, 9))))


def compute_sigma(arch, rho):
    """Fraction of estimator paths that brings the GLAI parameter total to O."""
    O = param_count_original(arch)
    R = param_count_reduced(arch, rho)
    if R >= O:
        raise ReducedNotSmallerError(f"reduced network has {R} parameters, original {O}")
    E = estimator_size(arch, rho)
    raw = (O - R) / E
    return {"sigma": min(1.0, raw), "clamped": raw > 1.0, "raw_sigma": raw, "O": O, "R": R, "E": E}


@dataclass
class ParityLedger:
    O: int
    R: int
    E_total: int
    sigma: float
    retained_paths: int
    glai_param_total: int
    clamped: bool = False
    rho: Optional[float] = None
    closed_form_R: Optional[float] = None
    closed_form_E: Optional[float] = None

    @classmethod
    def build(cls, arch, rho):
        s = compute_sigma(arch, rho)
        kept = retained_count(s["sigma"], s["E"])
        return cls(
            O=s["O"], R=s["R"], E_total=s["E"], sigma=s["sigma"], retained_paths=kept,
            glai_param_total=s["R"] + kept, clamped=s["clamped"], rho=rho,
            closed_form_R=reduced_count_closed_form(arch, rho), closed_form_E=estimator_count_closed_form(arch, rho),
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class PruneReport:
    removed_count: int
    kept_count: int
    score_threshold: float
    error_bound: float
    realized_error: float

    def to_dict(self):
        return asdict(self)


# --- the model ------------------------------------------------------------------


class GlaiModel:
    """``structure`` is never modified; ``table.weights`` is the estimator."""

    def __init__(self, structure: MlpModel, table: PathTable, parity=None, prune_report=None):
        if tuple(table.arch) != tuple(structure.arch):
            raise DimensionError("path table and structure disagree on the architecture")
        self.structure = structure
        self.table = table
        self.parity = parity
        self.prune_report = prune_report

    @property
    def arch(self):
        return self.structure.arch

    @property
    def estimator(self):
        return self.table.weights

    def estimator_blocks(self):
        """Per-output weight vectors, in table order."""
        out = self.table.outputs
        return [self.table.weights[out == i] for i in range(self.arch[-1])]

    def copy(self):
        return GlaiModel(self.structure, copy.deepcopy(self.table), self.parity, self.prune_report)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "structure": self.structure.to_dict(),
            "retained_paths": self.table.to_dict(),
            "estimator": [b.tolist() for b in self.estimator_blocks()],
            "parity": self.parity.to_dict() if self.parity else None,
            "prune": self.prune_report.to_dict() if self.prune_report else None,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported GLAI format_version {d.get('format_version')!r}")
        structure = MlpModel.from_dict(d["structure"])
        table = PathTable.from_dict(d["retained_paths"])
        blocks = d.get("estimator")
        if blocks is not None:
            w = np.empty(len(table))
            for i, block in enumerate(blocks):
                mask = table.outputs == i
                if mask.sum() != len(block):
                    raise DimensionError(f"estimator block {i} has {len(block)} weights for {mask.sum()} paths")
                w[mask] = block
            table.weights = w
        parity = ParityLedger(**d["parity"]) if d.get("parity") else None
        prune = PruneReport(**d["prune"]) if d.get("prune") else None
        return cls(structure, table, parity, prune)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def expand(model, path_budget=DEFAULT_PATH_BUDGET):
    """Exact path rewrite of ``model``: every path, weighted by its weight product."""
    total = path_count(model.arch)["total"]
    if total > path_budget:
        raise PathBudgetExceeded(f"{tuple(model.arch)} has {total} paths, budget is {path_budget}")
    return GlaiModel(model.copy(), PathTable.from_model(model))


def _selector_inputs(g, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1:] != (g.arch[0],) or X.ndim not in (1, 2):
        raise DimensionError(f"input shape {X.shape} does not match input dim {g.arch[0]}")
    X2 = np.ascontiguousarray(np.atleast_2d(X))
    _, acts, _ = trace_batch(g.structure, X2)
    return X2, _kernels.pack_acts(acts, X2.shape[0])


def glai_forward(g, x):
    """Sum of weight * contribution over retained paths, per output."""
    single = np.ndim(x) == 1
    X, acts = _selector_inputs(g, x)
    y = _kernels.outputs(X, acts, *g.table.selector_arrays(), g.table.weights, g.arch[-1])
    return y[0] if single else y


def selector_matrix(g, X):
    """(n, P) contribution matrix, columns in retained-table order."""
    X, acts = _selector_inputs(g, X)
    cols, origin, _ = g.table.selector_arrays()
    return _kernels.contributions(X, acts, cols, origin)


def selector_features(g, x):
    """Per-output contribution vectors S_i(x) for a single input."""
    row = selector_matrix(g, linalg.as_vector(x))[0]
    out = g.table.outputs
    return [row[out == i] for i in range(g.arch[-1])]


def path_norms(g, omega):
    X, acts = _selector_inputs(g, as_omega(omega, g.arch[0]))
    cols, origin, _ = g.table.selector_arrays()
    return _kernels.abs_mean(X, acts, cols, origin)


def score_paths(g, omega):
    """|weight| * mean |contribution| over the reference set, per retained path."""
    return np.abs(g.table.weights) * path_norms(g, omega)


def realized_error(g_full, g_pruned, omega):
    X = as_omega(omega, g_full.arch[0])
    diff = np.abs(glai_forward(g_full, X) - glai_forward(g_pruned, X))
    return float(diff.mean(axis=0).sum())


def prune(g, sigma, omega, per_output=False):
    """Keep the ceil(sigma * P) highest-scoring paths.

    Ties go to the path that comes first in canonical order. With
    ``per_output`` the quantile is taken separately inside each output block.
    """
    if not 0 < sigma <= 1:
        raise SigmaOutOfRangeError(f"sigma must lie in (0, 1], got {sigma}")
    scores = score_paths(g, omega)
    P = len(g.table)
    if per_output:
        keep = []
        for i in range(g.arch[-1]):
            idx = np.flatnonzero(g.table.outputs == i)
            order = idx[np.argsort(-scores[idx], kind="stable")]
            keep.append(order[:retained_count(sigma, len(idx))])
        keep = np.sort(np.concatenate(keep))
    else:
        order = np.argsort(-scores, kind="stable")
        keep = np.sort(order[:retained_count(sigma, P)])
    removed = np.ones(P, dtype=bool)
    removed[keep] = False
    pruned = GlaiModel(g.structure, g.table.subset(keep), g.parity)
    report = PruneReport(
        removed_count=int(removed.sum()),
        kept_count=len(keep),
        score_threshold=float(scores[keep].min()) if len(keep) else 0.0,
        error_bound=float(scores[removed].sum()),
        realized_error=realized_error(g, pruned, omega),
    )
    pruned.prune_report = report
    return pruned, report


# --- estimator training ---------------------------------------------------------


def estimator_loss_and_grad(g, X, Y, loss):
    """Mean batch loss and its gradient w.r.t. the estimator weights."""
    X, acts = _selector_inputs(g, X)
    sel = g.table.selector_arrays()
    y = _kernels.outputs(X, acts, *sel, g.table.weights, g.arch[-1])
    value, dy = loss_and_output_grad(y, Y, loss)
    grad = _kernels.estimator_grad(X, acts, *sel, np.ascontiguousarray(dy))
    return value, grad


def train_estimator_epoch(g, train, cfg, rng):
    """Mini-batch SGD on the estimator only; the structure is read, never written."""
    _check_dataset(g.structure, train)
    w = g.table.weights
    total = 0.0
    for idx in minibatches(len(train), cfg.batch_size, rng):
        value, grad = estimator_loss_and_grad(g, train.inputs[idx], train.targets[idx], cfg.loss)
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite estimator loss {value}")
        total += value * len(idx)
        w -= cfg.learning_rate * (grad + cfg.weight_decay * w)
    return total / len(train)


def evaluate_glai(g, ds, loss):
    _check_dataset(g.structure, ds)
    return evaluate_outputs(glai_forward(g, ds.inputs), ds.targets, loss)


def fit_estimator(g, split, cfg, on_epoch=None):
    """Early-stopped estimator training; ``best_model`` holds a GlaiModel copy."""
    rng = linalg.make_rng(cfg.seed)
    return run_epochs(
        step=lambda: train_estimator_epoch(g, split.train, cfg, rng),
        validate=lambda: evaluate_glai(g, split.validation, cfg.loss),
        snapshot=g.copy,
        cfg=cfg,
        phase="glai",
        on_epoch=on_epoch,
    )
