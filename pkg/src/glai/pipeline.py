"""Two-phase GLAI training and the matched MLP baseline."""
import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import dataset as datasets
from .errors import ConfigError
from .mlp import (
    EarlyStopConfig,
    EpochRecord,
    TrainConfig,
    check_arch,
    evaluate,
    fit,
    monitored_value,
    new_mlp,
    reduce_arch,
    train_epoch,
)
from .linalg import make_rng
from . import _kernels
from .model import (
    ParityLedger,
    PruneReport,
    estimator_loss_and_grad,
    expand,
    fit_estimator,
    prune,
    selector_features,
)
from .paths import convergence_monitor, omega_subsample, structural_metric

CSV_COLUMNS = ("phase", "epoch", "train_loss", "val_loss", "val_acc", "m_t", "seconds")


@dataclass
class DataSpec:
    source: str = "teacher"  # teacher | csv | idx
    task: str = "classification"
    teacher_arch: Optional[tuple] = None  # defaults to the experiment arch
    n_samples: int = 2000
    noise_std: float = 0.0
    seed: int = 1000  # kept apart from training seeds so no student starts as the teacher
    path: Optional[str] = None
    header: Union[bool, str] = "auto"
    label_columns: tuple = (-1,)
    images: Optional[str] = None
    labels: Optional[str] = None
    val_fraction: float = 0.2
    split_seed: int = 0


@dataclass
class Phase1Config:
    rho: float = 0.5
    epochs: Union[int, str] = "auto"
    max_epochs: int = 30  # cap when epochs == "auto"


@dataclass
class ConvergenceRule:
    window: int = 3
    rel_threshold: float = 0.1


@dataclass
class OmegaSpec:
    source: str = "train"
    max_samples: int = 512
    seed: int = 0


def _glai_defaults():
    return TrainConfig(weight_decay=0.1)


@dataclass
class ExperimentConfig:
    arch: tuple = (16, 64, 64, 4)
    data: DataSpec = field(default_factory=DataSpec)
    mlp_train: TrainConfig = field(default_factory=TrainConfig)
    glai_phase1: Phase1Config = field(default_factory=Phase1Config)
    glai_phase2: TrainConfig = field(default_factory=_glai_defaults)
    convergence_rule: ConvergenceRule = field(default_factory=ConvergenceRule)
    omega: OmegaSpec = field(default_factory=OmegaSpec)

    def __post_init__(self):
        self.arch = check_arch(self.arch)
        if not 0 < self.glai_phase1.rho < 1:
            raise ConfigError(f"rho must lie in (0, 1), got {self.glai_phase1.rho}")
        if self.omega.max_samples < 1:
            raise ConfigError("omega max_samples must be >= 1")
        if self.omega.source not in ("train", "validation"):
            raise ConfigError("omega source must be 'train' or 'validation'")
        epochs = self.glai_phase1.epochs
        if epochs != "auto" and not (isinstance(epochs, int) and epochs >= 1):
            raise ConfigError("phase-1 epochs must be 'auto' or an integer >= 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kwargs = {}
        if "arch" in d:
            kwargs["arch"] = tuple(d.pop("arch"))
        for key, typ in (("data", DataSpec), ("glai_phase1", Phase1Config),
                         ("convergence_rule", ConvergenceRule), ("omega", OmegaSpec)):
            if key in d:
                kwargs[key] = typ(**d.pop(key))
        for key in ("mlp_train", "glai_phase2"):
            if key in d:
                kwargs[key] = TrainConfig(**d.pop(key))
        if d:
            raise ConfigError(f"unknown experiment keys: {sorted(d)}")
        return cls(**kwargs)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["arch"] = list(self.arch)
        return out

    def with_seed(self, seed):
        """Copy with both training arms reseeded (data and split unchanged)."""
        cfg = ExperimentConfig.from_dict(self.to_dict())
        cfg.mlp_train.seed = seed
        cfg.glai_phase2.seed = seed
        return cfg


@dataclass
class RunReport:
    arm: str
    records: list
    best_validation_score: float
    best_epoch: int
    epochs_to_stop: int
    total_wall_clock: float
    monitor: str
    parity: Optional[ParityLedger] = None
    prune: Optional[PruneReport] = None
    conversion_seconds: float = 0.0
    phase1_epochs: int = 0

    def to_dict(self):
        return {
            "arm": self.arm,
            "records": [r.to_dict() for r in self.records],
            "best_validation_score": self.best_validation_score,
            "best_epoch": self.best_epoch,
            "epochs_to_stop": self.epochs_to_stop,
            "total_wall_clock": self.total_wall_clock,
            "monitor": self.monitor,
            "parity": self.parity.to_dict() if self.parity else None,
            "prune": self.prune.to_dict() if self.prune else None,
            "conversion_seconds": self.conversion_seconds,
            "phase1_epochs": self.phase1_epochs,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["records"] = [EpochRecord(**r) for r in d["records"]]
        d["parity"] = ParityLedger(**d["parity"]) if d.get("parity") else None
        d["prune"] = PruneReport(**d["prune"]) if d.get("prune") else None
        return cls(**d)

    def to_csv(self):
        return records_to_csv(self.records)


def records_to_csv(records):
    """Per-epoch rows under the fixed ``CSV_COLUMNS`` header."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([r.phase, r.epoch, repr(r.train_loss), repr(r.val_loss),
                         "" if r.val_accuracy is None else repr(r.val_accuracy),
                         "" if r.m_t is None else repr(r.m_t), repr(r.seconds)])
    return buf.getvalue()


@dataclass
class ComparisonReport:
    mlp: RunReport
    glai: RunReport
    speedup: float
    bvs_delta: float
    seed: Optional[int] = None

    def to_dict(self):
        return {"seed": self.seed, "speedup": self.speedup, "bvs_delta": self.bvs_delta,
                "mlp": self.mlp.to_dict(), "glai": self.glai.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(RunReport.from_dict(d["mlp"]), RunReport.from_dict(d["glai"]),
                   d["speedup"], d["bvs_delta"], d.get("seed"))

    def summary_row(self):
        return {
            "seed": self.seed,
            "speedup": self.speedup,
            "bvs_delta": self.bvs_delta,
            "mlp_bvs": self.mlp.best_validation_score,
            "glai_bvs": self.glai.best_validation_score,
            "mlp_epochs": self.mlp.epochs_to_stop,
            "glai_epochs": self.glai.epochs_to_stop,
            "mlp_seconds": self.mlp.total_wall_clock,
            "glai_seconds": self.glai.total_wall_clock,
        }


@dataclass
class MultiSeedReport:
    runs: list
    mean: dict

    def to_dict(self):
        return {"runs": [r.to_dict() for r in self.runs], "mean": self.mean,
                "rows": [r.summary_row() for r in self.runs]}

    @classmethod
    def from_dict(cls, d):
        return cls([ComparisonReport.from_dict(r) for r in d["runs"]], d["mean"])


# --- data -----------------------------------------------------------------------


def load_data(cfg):
    spec = cfg.data
    if spec.source == "teacher":
        arch = tuple(spec.teacher_arch) if spec.teacher_arch else cfg.arch
        ds = datasets.gen_teacher(spec.seed, arch, spec.n_samples, spec.noise_std, spec.task)
    elif spec.source == "csv":
        if not spec.path:
            raise ConfigError("csv data source needs a path")
        n_classes = cfg.arch[-1] if spec.task == "classification" else None
        ds = datasets.load_csv(spec.path, tuple(spec.label_columns), header=spec.header,
                               task=spec.task, n_classes=n_classes)
    elif spec.source == "idx":
        if not (spec.images and spec.labels):
            raise ConfigError("idx data source needs images and labels paths")
        ds = datasets.load_idx(spec.images, spec.labels)
        ds.n_outputs = max(ds.n_outputs, cfg.arch[-1])
    else:
        raise ConfigError(f"unknown data source {spec.source!r}")
    if ds.input_dim != cfg.arch[0] or ds.output_dim != cfg.arch[-1]:
        raise ConfigError(f"data has {ds.input_dim} inputs / {ds.output_dim} outputs, arch is {cfg.arch}")
    return datasets.split(ds, spec.val_fraction, spec.split_seed)


def reference_set(cfg, split):
    source = split.train if cfg.omega.source == "train" else split.validation
    return omega_subsample(source.inputs, cfg.omega.max_samples, cfg.omega.seed)


def _check_loss(cfg, split):
    for name, tc in (("mlp_train", cfg.mlp_train), ("glai_phase2", cfg.glai_phase2)):
        if tc.loss != split.train.loss:
            raise ConfigError(f"{name}.loss={tc.loss!r} does not fit a {split.train.task} task")


def check_fairness(cfg):
    """Both arms must share everything except weight decay and epoch caps."""
    a, b = cfg.mlp_train, cfg.glai_phase2
    for attr in ("learning_rate", "batch_size", "seed", "loss"):
        if getattr(a, attr) != getattr(b, attr):
            raise ConfigError(f"arms differ in {attr}: {getattr(a, attr)} vs {getattr(b, attr)}")
    if a.early_stop != b.early_stop:
        raise ConfigError("arms must share early-stopping settings")


# --- arms -----------------------------------------------------------------------


def run_mlp_baseline(cfg, split=None):
    split = split if split is not None else load_data(cfg)
    _check_loss(cfg, split)
    model = new_mlp(cfg.arch, cfg.mlp_train.seed)
    t0 = time.perf_counter()
    result = fit(model, split, cfg.mlp_train)
    total = time.perf_counter() - t0
    return RunReport(
        arm="mlp", records=result.records, best_validation_score=result.best_score,
        best_epoch=result.best_epoch, epochs_to_stop=result.epochs, total_wall_clock=total,
        monitor=cfg.mlp_train.early_stop.monitor,
    )


def train_phase1(cfg, split, omega):
    """Train the reduced MLP; returns (model, records, m_t history)."""
    reduced = reduce_arch(cfg.arch, cfg.glai_phase1.rho)
    tc = cfg.mlp_train
    model = new_mlp(reduced, tc.seed)
    rng = make_rng(tc.seed)
    auto = cfg.glai_phase1.epochs == "auto"
    budget = cfg.glai_phase1.max_epochs if auto else int(cfg.glai_phase1.epochs)
    budget = max(1, budget)
    rule = cfg.convergence_rule
    records, history = [], []
    for epoch in range(1, budget + 1):
        t0 = time.perf_counter()
        before = model.copy()
        train_loss = train_epoch(model, split.train, tc, rng)
        metrics = evaluate(model, split.validation, tc.loss)
        m_t = structural_metric(before, model, omega)
        seconds = time.perf_counter() - t0
        history.append(m_t)
        records.append(EpochRecord(epoch, train_loss, metrics["loss"], metrics["accuracy"],
                                   seconds, "reduced_mlp", m_t))
        if auto and convergence_monitor(history, rule.window, rule.rel_threshold)["converged"]:
            break
    return model, records, history


def run_glai_with_model(cfg, split=None):
    """Like :func:`run_glai` but also returns the best GLAI model."""
    split = split if split is not None else load_data(cfg)
    _check_loss(cfg, split)
    parity = ParityLedger.build(cfg.arch, cfg.glai_phase1.rho)
    omega = reference_set(cfg, split)
    t_start = time.perf_counter()
    structure, records, _ = train_phase1(cfg, split, omega)
    t_conv = time.perf_counter()
    g, report = prune(expand(structure), parity.sigma, omega)
    g.parity = parity
    conversion = time.perf_counter() - t_conv
    n1 = len(records)

    def renumber(rec):
        rec.epoch += n1

    result = fit_estimator(g, split, cfg.glai_phase2, on_epoch=renumber)
    total = time.perf_counter() - t_start
    return RunReport(
        arm="glai", records=records + result.records, best_validation_score=result.best_score,
        best_epoch=result.best_epoch + n1, epochs_to_stop=n1 + result.epochs, total_wall_clock=total,
        monitor=cfg.glai_phase2.early_stop.monitor, parity=parity, prune=report,
        conversion_seconds=conversion, phase1_epochs=n1,
    ), result.best_model


def run_glai(cfg, split=None):
    return run_glai_with_model(cfg, split)[0]


def _bvs_delta(mlp, other):
    delta = other.best_validation_score - mlp.best_validation_score
    # positive delta always means "second arm is better"
    return delta if mlp.monitor == "val_accuracy" else -delta


_warm_backends = set()


def warm_up():
    """Run every kernel once so JIT loading is not billed to whichever arm runs first."""
    name = _kernels.backend_name()
    if name in _warm_backends:
        return
    X = np.zeros((2, 2))
    g, _ = prune(expand(new_mlp((2, 2, 2), 0)), 0.5, X)
    selector_features(g, X[0])
    estimator_loss_and_grad(g, X, np.zeros(2, dtype=np.int64), "cross_entropy")
    _warm_backends.add(name)


def compare(cfg, split=None, glai_enabled=True, seed=None):
    check_fairness(cfg)
    warm_up()
    split = split if split is not None else load_data(cfg)
    mlp = run_mlp_baseline(cfg, split)
    if glai_enabled:
        other = run_glai(cfg, split)
    else:
        other = run_mlp_baseline(cfg, split)
        other.arm = "mlp_repeat"
    return ComparisonReport(mlp, other, mlp.total_wall_clock / other.total_wall_clock,
                            _bvs_delta(mlp, other), seed)


def compare_seeds(cfg, seeds=3, base_seed=None):
    """Repeat :func:`compare` over consecutive seeds on one fixed data split."""
    check_fairness(cfg)
    split = load_data(cfg)
    base = cfg.mlp_train.seed if base_seed is None else base_seed
    runs = [compare(cfg.with_seed(base + i), split, seed=base + i) for i in range(seeds)]
    rows = [r.summary_row() for r in runs]
    mean = {k: float(np.mean([row[k] for row in rows])) for k in rows[0] if k != "seed"}
    return MultiSeedReport(runs, mean)


def to_json(report):
    return json.dumps(report.to_dict(), sort_keys=True, indent=1)
