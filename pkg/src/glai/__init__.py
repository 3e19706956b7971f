"""Path-based rewriting and accelerated training of ReLU MLPs."""
from .dataset import Dataset, Split, gen_teacher, load_csv, load_idx, split
from .mlp import (
    MlpModel,
    TrainConfig,
    EarlyStopConfig,
    evaluate,
    fit,
    forward,
    forward_trace,
    new_mlp,
    pattern_forward,
    reduce_arch,
    train_epoch,
)
from .model import (
    GlaiModel,
    ParityLedger,
    PruneReport,
    compute_sigma,
    estimator_size,
    expand,
    glai_forward,
    param_count_original,
    param_count_reduced,
    prune,
    score_paths,
    selector_features,
    train_estimator_epoch,
)
from .paths import (
    Path,
    PathTable,
    convergence_monitor,
    enumerate_paths,
    path_contribution,
    path_count,
    path_distance,
    path_indicator,
    path_norm,
    path_weight,
    structural_metric,
)

__version__ = "0.1.0"
