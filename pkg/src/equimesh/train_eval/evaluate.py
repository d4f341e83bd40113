"""Inference, scoring and the rigid-perturbation robustness suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mesh import reflection_x, rotation_z
from ..model import Model
from .metrics import MetricsReport, format_table, rows_to_csv, segmentation_metrics
from .training import batch_samples

CONDITIONS = (
    ("baseline", np.eye(3)),
    ("rot_z15", rotation_z(15.0)),
    ("rot_z40", rotation_z(40.0)),
    ("refl_x", reflection_x()),
)

DENTAL_TAGS = ("teeth3ds", "iosseg")


def predict_logits(model: Model, samples) -> list[np.ndarray]:
    """Evaluation-mode logits, one mesh at a time so results never depend on batching."""
    return [model(batch_samples([s])).logits.data.copy() for s in samples]


def element_points(sample) -> np.ndarray:
    """Positions of the labelled elements: vertices, face centroids or edge midpoints."""
    v = sample.mesh.vertices
    if sample.level == "vertex":
        return v
    if sample.level == "face":
        return v[sample.features.faces].mean(axis=1)
    d = sample.features.directed_edges
    und = np.unique(np.sort(d, axis=1), axis=0)
    return 0.5 * (v[und[:, 0]] + v[und[:, 1]])


def evaluate(model: Model, samples, squash: bool | None = None) -> tuple[MetricsReport, list, list]:
    """Score ``samples``; returns ``(report, predicted labels, logits)``.

    FDI squashing defaults to on for the dental presets.
    """
    samples = list(samples)
    if squash is None:
        squash = bool(samples) and samples[0].feature_config.dataset_tag in DENTAL_TAGS
    logits = predict_logits(model, samples)
    preds = [lg.argmax(axis=1) for lg in logits]
    report = segmentation_metrics(
        preds,
        [s.labels for s in samples],
        points=[element_points(s) for s in samples],
        squash=squash,
    )
    return report, preds, logits


@dataclass
class PerturbationResult:
    reports: dict = field(default_factory=dict)
    preds: dict = field(default_factory=dict)
    logits: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        """One row per condition with deltas against the baseline."""
        base = self.reports["baseline"]
        out = []
        for name, rep in self.reports.items():
            same = all(np.array_equal(a, b) for a, b in zip(self.preds[name], self.preds["baseline"]))
            dev = max(
                (float(np.abs(a - b).max()) for a, b in zip(self.logits[name], self.logits["baseline"])),
                default=0.0,
            )
            out.append(
                {
                    "condition": name,
                    **rep.summary(),
                    "delta_avg_iou": rep.average_iou - base.average_iou,
                    "argmax_identical": same,
                    "max_logit_dev": dev,
                }
            )
        return out

    def class_rows(self) -> list[dict]:
        """Per-class Dice and IoU side by side across conditions."""
        classes = sorted(set().union(*(r.class_iou for r in self.reports.values())))
        out = []
        for c in classes:
            row = {"class": c}
            for name, rep in self.reports.items():
                row[f"{name}_dice"] = rep.class_dice.get(c)
                row[f"{name}_iou"] = rep.class_iou.get(c)
            out.append(row)
        return out

    def table(self) -> str:
        return format_table(self.rows())

    def to_csv(self, path=None) -> str:
        return rows_to_csv(self.rows(), path)


def perturbation_suite(model: Model, samples, conditions=CONDITIONS, squash: bool | None = None) -> PerturbationResult:
    """Re-featurise every sample under each rigid condition and score it.

    Reflections rewind faces so the moved mesh keeps outward orientation.
    """
    samples = list(samples)
    result = PerturbationResult()
    for name, R in conditions:
        moved = samples if name == "baseline" else [s.transformed(R, rewind=True) for s in samples]
        rep, preds, logits = evaluate(model, moved, squash)
        result.reports[name] = rep
        result.preds[name] = preds
        result.logits[name] = logits
    return result
