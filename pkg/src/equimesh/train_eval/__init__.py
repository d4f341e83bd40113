"""Optimisation, cross-validation, metrics and robustness evaluation."""

from .evaluate import CONDITIONS, PerturbationResult, element_points, evaluate, perturbation_suite, predict_logits
from .metrics import (
    UNDEFINED,
    MetricsReport,
    class_scores,
    distance_metrics,
    format_table,
    mesh_average_iou,
    rows_to_csv,
    segmentation_metrics,
    set_scores,
    squash_fdi,
)
from .optim import (
    AdamW,
    AdamWState,
    PlateauScheduler,
    TrainConfig,
    adamw_step,
    clip_by_global_norm,
    global_norm,
    kfold_split,
    plateau_schedule,
    train_test_split,
)
from .training import (
    TrainResult,
    augment_batch,
    batch_loss,
    batch_samples,
    face_adjacency_pairs,
    make_batches,
    mean_loss,
    train_loop,
)

__all__ = [
    "CONDITIONS", "PerturbationResult", "element_points", "evaluate", "perturbation_suite",
    "predict_logits", "UNDEFINED", "MetricsReport", "class_scores", "distance_metrics",
    "format_table", "mesh_average_iou", "rows_to_csv", "segmentation_metrics", "set_scores",
    "squash_fdi", "AdamW", "AdamWState", "PlateauScheduler", "TrainConfig", "adamw_step",
    "clip_by_global_norm", "global_norm", "kfold_split", "plateau_schedule", "train_test_split",
    "TrainResult", "augment_batch", "batch_loss", "batch_samples", "face_adjacency_pairs",
    "make_batches", "mean_loss", "train_loop",
]
