"""Self-checks: full-model finite differences and rigid-motion invariance of predictions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import gradcheck
from .features import FeatureConfig
from .mesh import Mesh, random_rotation, reflection_x, rotation_z
from .model import Model, shipped_config
from .objectives import LossWeights
from .pipeline import DATASET_LEVELS, Sample, make_sample
from .synth import ellipsoid, icosphere_cap, torus, tube_arch
from .train_eval.training import batch_loss, batch_samples


def fixture_mesh(tag: str, seed: int = 0) -> Mesh:
    """A labelled synthetic mesh suited to the dataset preset ``tag``."""
    rng = np.random.default_rng(seed)
    if tag in ("teeth3ds", "iosseg"):
        m = tube_arch(n_sectors=16, n_along=32, n_around=8, noise=0.004, seed=seed)
        labels = m.vertex_labels + 1
        if tag == "iosseg":
            return _with_face_labels(m, labels)
        return Mesh(m.vertices, m.faces, vertex_labels=labels)
    if tag == "liver":
        m = ellipsoid(level=2, seed=seed)
        v = m.vertices + 0.02 * rng.standard_normal(m.vertices.shape)
        return _with_edge_labels(Mesh(v, m.faces), n_classes=3)
    return icosphere_cap(level=2, cap_angle=45.0, bulge=0.15, noise=0.01, random_axis=True, seed=seed)


def _with_face_labels(m: Mesh, vertex_labels: np.ndarray) -> Mesh:
    return Mesh(m.vertices, m.faces, face_labels=vertex_labels[m.faces].max(axis=1))


def _with_edge_labels(m: Mesh, n_classes: int) -> Mesh:
    # classes by height band along the long axis; boundary-crossing edges take the upper band
    x = m.vertices[:, 0]
    cuts = np.quantile(x, np.linspace(0, 1, n_classes + 1)[1:-1])
    band = np.searchsorted(cuts, x)
    f = m.faces
    e = np.unique(np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1), axis=0)
    return Mesh(m.vertices, m.faces, edges=e, edge_labels=band[e].max(axis=1))


def tiny_mesh(tag: str = "intra") -> Mesh:
    """A mesh of at most 30 vertices for exhaustive derivative checks."""
    m = torus(n_major=6, n_minor=4)
    v = m.vertices * np.array([1.0, 0.8, 1.3])
    v = v + 0.03 * np.random.default_rng(0).standard_normal(v.shape)
    labels = (v[:, 0] > 0.2).astype(np.int64)
    base = Mesh(v, m.faces, vertex_labels=labels)
    if tag in ("teeth3ds", "iosseg"):
        labels = labels + (v[:, 1] > 0).astype(np.int64) * 2
        base = Mesh(v, m.faces, vertex_labels=labels)
        return _with_face_labels(base, labels) if tag == "iosseg" else base
    if tag == "liver":
        return _with_edge_labels(Mesh(v, m.faces), n_classes=3)
    return base


def fixture_sample(tag: str, seed: int = 0, mesh: Mesh | None = None) -> Sample:
    mesh = fixture_mesh(tag, seed) if mesh is None else mesh
    config = FeatureConfig.preset(tag)
    return make_sample(mesh, config, DATASET_LEVELS[tag], mesh_id=f"{tag}-{seed}")


@dataclass
class GradcheckReport:
    variant: str
    worst: float
    per_block: dict = field(default_factory=dict)


def model_gradcheck(
    tag: str = "intra",
    variant: str = "base",
    seed: int = 0,
    max_coords: int | None = 4,
    eps: float = 1e-6,
) -> GradcheckReport:
    """Central-difference check of every parameter block of a fresh model on :func:`tiny_mesh`.

    The objective is the full evaluation-mode training loss for the variant.
    ``max_coords`` coordinates are probed per block (all when ``None``).
    """
    sample = fixture_sample(tag, mesh=tiny_mesh(tag))
    batch = batch_samples([sample])
    model = Model(shipped_config(tag, variant), seed=seed)
    weights = LossWeights.for_dataset(tag)
    rng = np.random.default_rng(seed)
    report = GradcheckReport(variant, 0.0)
    named = list(model.named_parameters())
    params = [p for _, p in named]

    def objective(*_):
        return batch_loss(model, batch, weights)[0]

    for name, p in named:
        for q in params:
            q.grad = None
        err = gradcheck(objective, [p], eps=eps, max_coords=max_coords, rng=rng)
        report.per_block[name] = err
        report.worst = max(report.worst, err)
    return report


INVARIANCE_CONDITIONS = (
    ("rot_z15", rotation_z(15.0), np.zeros(3)),
    ("rot_z40", rotation_z(40.0), np.zeros(3)),
    ("refl_x", reflection_x(), np.zeros(3)),
)


@dataclass
class InvarianceReport:
    max_logit_dev: dict = field(default_factory=dict)
    argmax_identical: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_logit_dev.values(), default=0.0)

    def ok(self, tol: float = 1e-9, names=None) -> bool:
        names = names or list(self.max_logit_dev)
        return all(self.max_logit_dev[n] < tol and self.argmax_identical[n] for n in names)


def invariance_check(model: Model, samples, conditions=None, seed: int = 0) -> InvarianceReport:
    """Largest logit change when every sample is re-featurised after each rigid motion.

    Besides the fixed conditions, one random proper rotation with a random
    translation is drawn per sample.
    """
    rng = np.random.default_rng(seed)
    conditions = INVARIANCE_CONDITIONS if conditions is None else conditions
    report = InvarianceReport()
    for s in samples:
        base = model(batch_samples([s])).logits.data
        draws = list(conditions) + [("random_se3", random_rotation(rng), rng.uniform(-2.0, 2.0, 3))]
        for name, R, t in draws:
            moved = model(batch_samples([s.transformed(R, t, rewind=True)])).logits.data
            dev = float(np.abs(moved - base).max())
            same = bool(np.array_equal(moved.argmax(axis=1), base.argmax(axis=1)))
            report.max_logit_dev[name] = max(report.max_logit_dev.get(name, 0.0), dev)
            report.argmax_identical[name] = report.argmax_identical.get(name, True) and same
    return report
