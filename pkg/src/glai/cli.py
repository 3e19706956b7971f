"""``glai`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Settings come from an optional ``--config`` JSON file; command-line flags
override it, and ``GLAI_SEED`` overrides the config seed (but not ``--seed``).
"""
import argparse
import copy
import csv
import io
import itertools
import json
import os
import sys
from pathlib import Path as FsPath

import jsonschema
import numpy as np

from . import dataset as datasets
from . import pipeline, schemas, svg
from .errors import (
    ArchMismatchError,
    BottleneckError,
    ConfigError,
    DatasetError,
    EqualWidthError,
    GlaiError,
    InvalidArchError,
    ReducedNotSmallerError,
    SigmaOutOfRangeError,
)
from .mlp import MlpModel, fit, forward, new_mlp, reduce_arch
from .model import (
    GlaiModel,
    ParityLedger,
    expand,
    fit_estimator,
    glai_forward,
    path_norms,
    prune,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SELF_TEST_TOL = 1e-9
CONFIG_ONLY_KEYS = ("seed", "seeds", "output_dir")

# errors caused by what the user asked for, not by the computation
USAGE_ERRORS = (ConfigError, InvalidArchError, BottleneckError, EqualWidthError,
                ReducedNotSmallerError, SigmaOutOfRangeError, ArchMismatchError, DatasetError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- configuration ----------------------------------------------------------------


def parse_arch(text):
    try:
        arch = tuple(int(v) for v in str(text).replace(" ", "").split(","))
    except ValueError:
        raise UsageError(f"architecture must be comma-separated integers, got {text!r}") from None
    if len(arch) < 2 or min(arch) < 1:
        raise UsageError(f"architecture needs at least two positive widths, got {text!r}")
    return arch


def _check_schema(doc, kind, where):
    problems = schemas.errors(doc, kind)
    if problems:
        raise UsageError(f"{where}: " + "; ".join(problems))


def read_config(path):
    if path is None:
        return {}
    path = FsPath(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    _check_schema(doc, "config", str(path))
    return doc


def _set(doc, dotted, value):
    if value is None:
        return
    *parents, leaf = dotted.split(".")
    node = doc
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def _both_arms(doc, key, value):
    _set(doc, f"mlp_train.{key}", value)
    _set(doc, f"glai_phase2.{key}", value)


def resolve_seed(args, doc):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("GLAI_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"GLAI_SEED must be an integer, got {env!r}") from None
    return doc.get("seed")


def _apply_task_defaults(doc):
    """Regression data implies squared error monitored on validation loss."""
    if doc.get("data", {}).get("task") != "regression":
        return
    for arm in ("mlp_train", "glai_phase2"):
        section = doc.setdefault(arm, {})
        section.setdefault("loss", "squared_error")
        section.setdefault("early_stop", {}).setdefault("monitor", "val_loss")


def experiment_doc(args):
    """Merge config file, environment and flags into one config document."""
    doc = copy.deepcopy(read_config(getattr(args, "config", None)))
    flags = vars(args)
    if flags.get("arch"):
        doc["arch"] = list(parse_arch(flags["arch"]))
    if flags.get("data"):
        _set(doc, "data.source", "csv")
        _set(doc, "data.path", str(flags["data"]))
    _set(doc, "data.task", flags.get("task"))
    _set(doc, "data.val_fraction", flags.get("val_fraction"))
    _both_arms(doc, "max_epochs", flags.get("epochs"))
    _both_arms(doc, "learning_rate", flags.get("lr"))
    _both_arms(doc, "batch_size", flags.get("batch_size"))
    _both_arms(doc, "early_stop.patience", flags.get("patience"))
    _both_arms(doc, "early_stop.min_delta", flags.get("min_delta"))
    _both_arms(doc, "early_stop.monitor", flags.get("monitor"))
    _set(doc, "mlp_train.weight_decay", flags.get("weight_decay"))
    _set(doc, "glai_phase2.weight_decay", flags.get("glai_weight_decay"))
    _set(doc, "glai_phase1.rho", flags.get("rho"))
    if flags.get("phase1_epochs") is not None:
        p1 = flags["phase1_epochs"]
        _set(doc, "glai_phase1.epochs", p1 if p1 == "auto" else _positive_int(p1, "--phase1-epochs"))
    _set(doc, "omega.source", flags.get("omega_source"))
    _set(doc, "omega.max_samples", flags.get("omega_max"))
    seed = resolve_seed(args, doc)
    if seed is not None:
        doc["seed"] = seed
        _both_arms(doc, "seed", seed)
    _apply_task_defaults(doc)
    _check_schema(doc, "config", "configuration")
    return doc


def _positive_int(text, name):
    try:
        value = int(text)
    except ValueError:
        raise UsageError(f"{name} must be an integer or 'auto', got {text!r}") from None
    if value < 1:
        raise UsageError(f"{name} must be >= 1")
    return value


def build_experiment(doc):
    body = {k: v for k, v in doc.items() if k not in CONFIG_ONLY_KEYS}
    return pipeline.ExperimentConfig.from_dict(body)


def load_split(cfg):
    spec = cfg.data
    for name in ("path", "images", "labels"):
        value = getattr(spec, name)
        if value and spec.source in ("csv", "idx") and not FsPath(value).is_file():
            raise UsageError(f"dataset not found: {value}")
    if spec.source == "csv" and not spec.path:
        raise UsageError("no dataset given; pass --data or set data.path in the config")
    return pipeline.load_data(cfg)


def load_mlp(path):
    return MlpModel.from_dict(_read_json(path, "mlp_model"))


def load_glai(path):
    return GlaiModel.from_dict(_read_json(path, "glai_model"))


def _read_json(path, kind):
    path = FsPath(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    _check_schema(doc, kind, str(path))
    return doc


def write_json(path, doc, kind):
    problems = schemas.errors(doc, kind)
    if problems:
        raise RuntimeError(f"refusing to write {path}: " + "; ".join(problems))
    FsPath(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _out_dir(path, force=True):
    path = FsPath(path)
    if path.exists() and not path.is_dir():
        raise UsageError(f"output path exists and is not a directory: {path}")
    if not force and path.is_dir() and any(path.iterdir()):
        raise UsageError(f"output directory {path} is not empty; use --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _say(message):
    print(message, file=sys.stderr)


# --- commands -----------------------------------------------------------------------


def cmd_gen_data(args):
    doc = read_config(args.config)
    data = doc.get("data", {})
    arch = args.teacher or data.get("teacher_arch") or doc.get("arch")
    if arch is None:
        raise UsageError("gen-data needs --teacher ARCH")
    arch = parse_arch(arch) if isinstance(arch, str) else tuple(arch)
    n = args.n if args.n is not None else data.get("n_samples", 1000)
    if n < 1:
        raise UsageError(f"--n must be >= 1, got {n}")
    seed = args.seed
    if seed is None:
        env = os.environ.get("GLAI_SEED")
        seed = int(env) if env else data.get("seed", doc.get("seed", 0))
    task = args.task or data.get("task", "classification")
    noise = args.noise if args.noise is not None else data.get("noise_std", 0.0)
    if noise < 0:
        raise UsageError("--noise must be >= 0")
    ds = datasets.gen_teacher(seed, arch, n, noise, task)
    out = _out_dir(args.out)
    datasets.save_csv(ds, out / "dataset.csv")
    write_json(out / "teacher.json", new_mlp(arch, seed).to_dict(), "mlp_model")
    print(f"wrote {len(ds)} rows to {out / 'dataset.csv'} and the teacher to {out / 'teacher.json'}")
    return EXIT_OK


def _run_files(out, report, model_doc, model_kind, model_name):
    write_json(out / model_name, model_doc, model_kind)
    write_json(out / "report.json", report.to_dict(), "run_report")
    (out / "metrics.csv").write_text(report.to_csv())


def cmd_train_mlp(args):
    doc = experiment_doc(args)
    cfg = build_experiment(doc)
    split = load_split(cfg)
    pipeline._check_loss(cfg, split)
    tc = cfg.mlp_train
    model = new_mlp(cfg.arch, tc.seed)
    result = fit(model, split, tc)
    best = result.best_model if result.best_model is not None else model
    # timings stay out of the model file so equal seeds give equal bytes
    best.training_meta = {
        "train_config": tc.to_dict(),
        "best_epoch": result.best_epoch,
        "best_validation_score": result.best_score,
        "epochs": result.epochs,
        "stopped_early": result.stopped_early,
    }
    report = pipeline.RunReport(
        arm="mlp", records=result.records, best_validation_score=result.best_score,
        best_epoch=result.best_epoch, epochs_to_stop=result.epochs,
        total_wall_clock=sum(r.seconds for r in result.records), monitor=tc.early_stop.monitor,
    )
    out = _out_dir(args.out)
    _run_files(out, report, best.to_dict(), "mlp_model", "model.json")
    print(f"trained {result.epochs} epochs, best {tc.early_stop.monitor}={result.best_score:.6g} "
          f"at epoch {result.best_epoch}; wrote {out}")
    return EXIT_OK


def equivalence_self_test(model, g, X):
    ref = forward(model, X)
    err = np.abs(glai_forward(g, X) - ref)
    scale = 1.0 + np.abs(ref).max(axis=1, keepdims=True)
    worst = float((err / scale).max())
    return {"max_abs_error": float(err.max()), "tolerance": SELF_TEST_TOL, "passed": worst <= SELF_TEST_TOL}


def cmd_to_glai(args):
    if args.rho is not None and not 0 < args.rho < 1:
        raise UsageError(f"--rho must lie in (0, 1), got {args.rho}")
    if args.sigma is not None and not 0 < args.sigma <= 1:
        raise UsageError(f"--sigma must lie in (0, 1], got {args.sigma}")
    model = load_mlp(args.model)
    doc = experiment_doc(args)
    doc["arch"] = list(model.arch)
    cfg = build_experiment(doc)
    rho = cfg.glai_phase1.rho
    if args.original_arch:
        original = parse_arch(args.original_arch)
        if reduce_arch(original, rho) != model.arch:
            raise ArchMismatchError(
                f"model arch {model.arch} is not {original} reduced by rho={rho} "
                f"(that would be {reduce_arch(original, rho)})"
            )
    else:
        original = model.arch
    parity = ParityLedger.build(original, rho)
    if parity.clamped:
        _say(f"warning: rho={rho} gives sigma={(parity.O - parity.R) / parity.E_total:.4g} > 1; "
             "sigma clamped to 1 (the GLAI model stays below the original parameter count)")
    sigma = args.sigma if args.sigma is not None else parity.sigma
    split = load_split(cfg)
    omega = pipeline.reference_set(cfg, split)
    g, report = prune(expand(model), sigma, omega)
    g.parity = parity
    self_test = None
    if sigma == 1:
        self_test = equivalence_self_test(model, g, omega)
        _say(f"equivalence self-test: max |glai - mlp| = {self_test['max_abs_error']:.3g} "
             f"({'passed' if self_test['passed'] else 'FAILED'})")
    out = g.to_dict()
    out["conversion"] = {
        "rho": rho, "sigma": sigma, "sigma_clamped": parity.clamped,
        "original_arch": list(original), "self_test": self_test,
    }
    dest = FsPath(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_json(dest, out, "glai_model")
    print(f"kept {report.kept_count} of {report.kept_count + report.removed_count} paths "
          f"(sigma={sigma:.6g}); error bound {report.error_bound:.6g}, "
          f"realized {report.realized_error:.6g}; wrote {dest}")
    if self_test is not None and not self_test["passed"]:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_train_estimator(args):
    g = load_glai(args.glai)
    doc = experiment_doc(args)
    doc["arch"] = list(g.arch)
    cfg = build_experiment(doc)
    split = load_split(cfg)
    pipeline._check_loss(cfg, split)
    frozen = g.structure.to_json()
    result = fit_estimator(g, split, cfg.glai_phase2)
    if g.structure.to_json() != frozen:
        raise RuntimeError("estimator training modified the frozen structure")
    best = result.best_model if result.best_model is not None else g
    report = pipeline.RunReport(
        arm="glai", records=result.records, best_validation_score=result.best_score,
        best_epoch=result.best_epoch, epochs_to_stop=result.epochs,
        total_wall_clock=sum(r.seconds for r in result.records),
        monitor=cfg.glai_phase2.early_stop.monitor, parity=g.parity, prune=g.prune_report,
    )
    out = _out_dir(args.out)
    _run_files(out, report, best.to_dict(), "glai_model", "glai.json")
    print(f"trained the estimator for {result.epochs} epochs, best "
          f"{cfg.glai_phase2.early_stop.monitor}={result.best_score:.6g}; wrote {out}")
    return EXIT_OK


SUMMARY_COLUMNS = ("seed", "mlp_bvs", "glai_bvs", "bvs_delta", "mlp_epochs", "glai_epochs",
                   "mlp_seconds", "glai_seconds", "speedup")


def summary_csv(rows, mean=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([row.get(c) if c == "seed" else repr(float(row[c])) for c in SUMMARY_COLUMNS])
    if mean is not None:
        writer.writerow(["mean"] + [repr(float(mean[c])) for c in SUMMARY_COLUMNS[1:]])
    return buf.getvalue()


def _write_comparison_files(out, comparison, suffix=""):
    records = comparison.mlp.records + comparison.glai.records
    (out / f"metrics{suffix}.csv").write_text(pipeline.records_to_csv(records))
    (out / f"loss{suffix}.svg").write_text(svg.loss_chart(comparison))
    (out / f"structure{suffix}.svg").write_text(svg.structure_chart(comparison.glai))


def cmd_pipeline(args):
    doc = experiment_doc(args)
    out_path = args.out or doc.get("output_dir")
    if not out_path:
        raise UsageError("pipeline needs --out DIR (or output_dir in the config)")
    cfg = build_experiment(doc)
    seeds = args.seeds if args.seeds is not None else doc.get("seeds", 1)
    if seeds < 1:
        raise UsageError("--seeds must be >= 1")
    split = load_split(cfg)
    out = _out_dir(out_path, force=args.force)
    if seeds == 1:
        comparison = pipeline.compare(cfg, split, seed=cfg.mlp_train.seed)
        write_json(out / "report.json", comparison.to_dict(), "comparison")
        _write_comparison_files(out, comparison)
        rows, mean = [comparison.summary_row()], None
    else:
        multi = pipeline.compare_seeds(cfg, seeds)
        write_json(out / "report.json", multi.to_dict(), "multi_seed")
        for run in multi.runs:
            _write_comparison_files(out, run, f"_seed{run.seed}")
        rows, mean = [r.summary_row() for r in multi.runs], multi.mean
    (out / "summary.csv").write_text(summary_csv(rows, mean))
    final = mean or rows[0]
    print(f"MLP BVS {final['mlp_bvs']:.4g} in {final['mlp_epochs']:.3g} epochs; "
          f"GLAI BVS {final['glai_bvs']:.4g} in {final['glai_epochs']:.3g} epochs; "
          f"speedup {final['speedup']:.3g}; wrote {out}")
    return EXIT_OK


INSPECT_COLUMNS = ("rank", "output", "origin", "route", "weight", "norm", "score")


def cmd_inspect_paths(args):
    if args.k < 0:
        raise UsageError("--k must be >= 0")
    g = load_glai(args.glai)
    doc = experiment_doc(args)
    doc["arch"] = list(g.arch)
    cfg = build_experiment(doc)
    omega = pipeline.reference_set(cfg, load_split(cfg))
    norms = path_norms(g, omega)
    scores = np.abs(g.table.weights) * norms
    order = np.argsort(-scores, kind="stable")[: args.k]
    rows = []
    for rank, p in enumerate(order, start=1):
        path = g.table.path(int(p))
        origin = f"x{path.origin}" if path.kind == "input" else f"b{path.origin}"
        route = "->".join(f"h{l}.{j}" for l, j in zip(itertools.count(max(path.start_layer, 1)), path.hidden))
        rows.append([rank, path.output, origin, route or "-", repr(float(g.table.weights[p])),
                     repr(float(norms[p])), repr(float(scores[p]))])
    if args.format == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(INSPECT_COLUMNS)
        writer.writerows(rows)
    else:
        table = [list(INSPECT_COLUMNS)] + [[str(c) for c in r] for r in rows]
        widths = [max(len(r[i]) for r in table) for i in range(len(INSPECT_COLUMNS))]
        for r in table:
            print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------


def _training_flags(p, estimator=False):
    p.add_argument("--data", help="CSV dataset (last column is the label)")
    p.add_argument("--task", choices=["classification", "regression"])
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--min-delta", type=float)
    p.add_argument("--monitor", choices=["val_accuracy", "val_loss"])
    p.add_argument("--seed", type=int)
    if estimator:
        p.add_argument("--weight-decay", dest="glai_weight_decay", type=float)
    else:
        p.add_argument("--weight-decay", type=float)


def _omega_flags(p):
    p.add_argument("--omega-source", choices=["train", "validation"])
    p.add_argument("--omega-max", type=int, help="reference-set size cap")


def build_parser():
    parser = _Parser(prog="glai", description="Path-based GLAI models for ReLU MLPs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a teacher-labelled dataset")
    p.add_argument("--config")
    p.add_argument("--teacher", help="teacher architecture, e.g. 8,16,3")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=["classification", "regression"])
    p.add_argument("--noise", type=float, help="regression target noise std")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-mlp", help="train an MLP with early stopping")
    p.add_argument("--config")
    p.add_argument("--arch")
    _training_flags(p)
    p.add_argument("--out", default="mlp_run")
    p.set_defaults(func=cmd_train_mlp)

    p = sub.add_parser("to-glai", help="rewrite a trained MLP as a pruned GLAI model")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--rho", type=float)
    p.add_argument("--sigma", type=float, help="override the parity sigma (1 keeps every path)")
    p.add_argument("--original-arch", help="architecture the model was reduced from")
    p.add_argument("--data")
    p.add_argument("--task", choices=["classification", "regression"])
    p.add_argument("--seed", type=int)
    _omega_flags(p)
    p.add_argument("--out", default="glai.json", help="output file")
    p.set_defaults(func=cmd_to_glai)

    p = sub.add_parser("train-estimator", help="train the estimator of a GLAI model")
    p.add_argument("--config")
    p.add_argument("--glai", required=True)
    _training_flags(p, estimator=True)
    p.add_argument("--out", default="glai_run")
    p.set_defaults(func=cmd_train_estimator)

    p = sub.add_parser("pipeline", help="MLP baseline against the two-phase GLAI procedure")
    p.add_argument("--config")
    p.add_argument("--arch")
    _training_flags(p)
    p.add_argument("--glai-weight-decay", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--phase1-epochs", help="integer or 'auto'")
    _omega_flags(p)
    p.add_argument("--seeds", type=int, help="repeat over this many consecutive seeds")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("inspect-paths", help="list the highest-scoring retained paths")
    p.add_argument("--config")
    p.add_argument("--glai", required=True)
    p.add_argument("--data")
    p.add_argument("--task", choices=["classification", "regression"])
    _omega_flags(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.set_defaults(func=cmd_inspect_paths)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE
    except USAGE_ERRORS as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE
    except jsonschema.ValidationError as exc:
        _say(f"error: invalid document: {exc.message}")
        return EXIT_USAGE
    except (GlaiError, OSError, RuntimeError, ValueError, FloatingPointError) as exc:
        _say(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
