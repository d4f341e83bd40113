"""Overlap and boundary-distance metrics for per-element segmentations."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class _Undefined:
    """Sentinel for a distance metric with an empty point set."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "UNDEFINED"

    def __bool__(self) -> bool:
        return False


UNDEFINED = _Undefined()


def set_scores(pred: set, true: set) -> tuple[float, float]:
    """``(dice, iou)`` of two finite sets; both empty counts as perfect agreement."""
    pred, true = set(pred), set(true)
    inter = len(pred & true)
    union = len(pred | true)
    if union == 0:
        return 1.0, 1.0
    return 2.0 * inter / (len(pred) + len(true)), inter / union


def class_scores(pred, true, classes=None) -> dict[int, tuple[float, float]]:
    """Per-class ``(dice, iou)`` for label arrays over the same elements.

    Only classes present in the prediction or the target are scored.
    """
    p = np.asarray(pred).ravel()
    t = np.asarray(true).ravel()
    if p.shape != t.shape:
        raise ValueError(f"prediction has {p.size} labels, target {t.size}")
    if classes is None:
        classes = np.union1d(p, t)
    out = {}
    for c in classes:
        pc, tc = p == c, t == c
        n_p, n_t = int(pc.sum()), int(tc.sum())
        if n_p + n_t == 0:
            continue
        inter = int((pc & tc).sum())
        out[int(c)] = (2.0 * inter / (n_p + n_t), inter / (n_p + n_t - inter))
    return out


def mesh_average_iou(pred, true) -> float:
    """Mean IoU over the classes present in the target of one mesh."""
    scores = class_scores(pred, true, np.unique(np.asarray(true)))
    return float(np.mean([iou for _, iou in scores.values()]))


def squash_fdi(labels) -> np.ndarray:
    """Fold lower-jaw FDI codes onto their mirrored upper ones (3x -> 1x, 4x -> 2x)."""
    lab = np.asarray(labels).copy()
    quadrant, tooth = np.divmod(lab, 10)
    lower = (quadrant == 3) | (quadrant == 4)
    lab[lower] = (quadrant[lower] - 2) * 10 + tooth[lower]
    return lab


def distance_metrics(pred_points, true_points, squared: bool = False):
    """``(chamfer_x100, hausdorff)`` between two point sets.

    Chamfer is the mean of the two directed mean nearest-neighbour distances
    (absolute by default, squared with ``squared=True``), multiplied by 100.
    Hausdorff is the larger directed max-min distance. Returns ``(UNDEFINED,
    UNDEFINED)`` when either set is empty.
    """
    P = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    T = np.asarray(true_points, dtype=np.float64).reshape(-1, 3)
    if len(P) == 0 or len(T) == 0:
        return UNDEFINED, UNDEFINED
    d_pt = cKDTree(T).query(P)[0]
    d_tp = cKDTree(P).query(T)[0]
    if squared:
        cd = 0.5 * (np.mean(d_pt**2) + np.mean(d_tp**2))
    else:
        cd = 0.5 * (d_pt.mean() + d_tp.mean())
    return float(cd * 100.0), float(max(d_pt.max(), d_tp.max()))


@dataclass
class MetricsReport:
    """Scores of one evaluation pass; Dice and IoU are fractions in [0, 1]."""

    class_dice: dict = field(default_factory=dict)
    class_iou: dict = field(default_factory=dict)
    mesh_iou: list = field(default_factory=list)
    chamfer_x100: float | None = None
    hausdorff: float | None = None
    n_undefined: int = 0

    @property
    def average_iou(self) -> float:
        return float(np.mean(self.mesh_iou)) if self.mesh_iou else float("nan")

    @property
    def mean_dice(self) -> float:
        return float(np.mean(list(self.class_dice.values()))) if self.class_dice else float("nan")

    def summary(self) -> dict:
        return {
            "avg_iou": self.average_iou,
            "mean_dice": self.mean_dice,
            "chamfer_x100": self.chamfer_x100,
            "hausdorff": self.hausdorff,
            "n_undefined": self.n_undefined,
        }

    def class_rows(self) -> list[dict]:
        return [
            {"class": c, "dice": self.class_dice[c], "iou": self.class_iou[c]}
            for c in sorted(self.class_dice)
        ]


def segmentation_metrics(
    preds,
    trues,
    points=None,
    squash: bool = False,
    squared_chamfer: bool = False,
) -> MetricsReport:
    """Score a list of per-mesh predictions against targets.

    Per-class Dice and IoU pool elements over all meshes. The average IoU first
    averages each mesh over its target-present classes. When ``points`` (per-mesh
    element positions) are given, boundary distances between predicted and true
    class regions are averaged over the (mesh, class) pairs where both are
    nonempty; the others are counted in ``n_undefined``.
    """
    preds = [np.asarray(p) for p in preds]
    trues = [np.asarray(t) for t in trues]
    if len(preds) != len(trues):
        raise ValueError("need one prediction per target")
    if squash:
        preds = [squash_fdi(p) for p in preds]
        trues = [squash_fdi(t) for t in trues]
    report = MetricsReport()
    if not preds:
        return report
    pooled = class_scores(np.concatenate(preds), np.concatenate(trues))
    report.class_dice = {c: d for c, (d, _) in pooled.items()}
    report.class_iou = {c: i for c, (_, i) in pooled.items()}
    report.mesh_iou = [mesh_average_iou(p, t) for p, t in zip(preds, trues)]
    if points is not None:
        cds, hds = [], []
        for p, t, x in zip(preds, trues, points):
            for c in np.union1d(p, t):
                cd, hd = distance_metrics(x[p == c], x[t == c], squared_chamfer)
                if cd is UNDEFINED:
                    report.n_undefined += 1
                else:
                    cds.append(cd)
                    hds.append(hd)
        report.chamfer_x100 = float(np.mean(cds)) if cds else None
        report.hausdorff = float(np.mean(hds)) if hds else None
    return report


# -- reporting -------------------------------------------------------------------------


def _cell(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def rows_to_csv(rows: list[dict], path=None) -> str:
    """CSV text with a header from the first row's keys; floats use ``repr`` so output is exact."""
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        keys = list(rows[0])
        w.writerow(keys)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in keys])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def format_table(rows: list[dict], digits: int = 2, percent=("avg_iou", "mean_dice", "dice", "iou")) -> str:
    """Aligned plain-text table; overlap scores are shown as percentages."""
    if not rows:
        return ""
    keys = list(rows[0])

    def fmt(k, x):
        if x is None:
            return "-"
        if isinstance(x, (float, np.floating)):
            return f"{100 * x:.{digits}f}" if k in percent else f"{x:.{digits + 2}f}"
        return str(x)

    cells = [[fmt(k, r.get(k)) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]

    def line(vals):
        return "  ".join(v.rjust(w) for v, w in zip(vals, widths))

    return "\n".join([line(keys), line(["-" * w for w in widths]), *(line(c) for c in cells)])
