"""Mini-batch training with validation, best-state tracking and exact resume."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..autodiff import Tensor, gather
from ..mesh import sample_augmentation
from ..model import GraphBatch, Model, load_checkpoint, make_batch, save_checkpoint
from ..objectives import (
    VN_SUBSAMPLE,
    LossWeights,
    boundary_contrast_loss,
    continuity_loss,
    default_sigma,
    prediction_loss,
    sra_reg_terms,
    subsample_indices,
    total_loss,
    vn_reg_loss,
)
from ..runtime import tune_allocator
from .optim import AdamW, PlateauScheduler, TrainConfig

_LABEL_FIELD = {"vertex": "node_labels", "face": "face_labels", "edge": "edge_labels"}


def batch_samples(samples) -> GraphBatch:
    """Disjoint union of samples, with their labels attached at the samples' level."""
    level = samples[0].level
    if any(s.level != level for s in samples):
        raise ValueError("cannot batch samples annotated at different levels")
    labels = [s.labels for s in samples]
    return make_batch([s.features for s in samples], **{_LABEL_FIELD[level]: labels})


def batch_targets(batch: GraphBatch, level: str) -> np.ndarray | None:
    return getattr(batch, _LABEL_FIELD[level])


def face_adjacency_pairs(faces: np.ndarray) -> np.ndarray:
    """Pairs of faces sharing an edge (manifold edges only)."""
    f = np.asarray(faces)
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    owner = np.tile(np.arange(len(f)), 3)
    order = np.lexsort((owner, e[:, 1], e[:, 0]))
    e, owner = e[order], owner[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    first = np.flatnonzero(same)
    pairs = np.stack([owner[first], owner[first + 1]], axis=1)
    return np.unique(np.sort(pairs, axis=1), axis=0)


def level_embeddings(h: Tensor, batch: GraphBatch, level: str) -> tuple[Tensor, np.ndarray]:
    """Element embeddings and their adjacency pairs for the boundary contrast term."""
    if level == "vertex":
        return h, batch.undirected[0]
    if level == "face":
        f = batch.faces
        emb = (gather(h, f[:, 0]) + gather(h, f[:, 1]) + gather(h, f[:, 2])) * (1.0 / 3.0)
        if "face_pairs" not in batch._cache:
            batch._cache["face_pairs"] = face_adjacency_pairs(f)
        return emb, batch._cache["face_pairs"]
    edges = batch.undirected[0]
    return (gather(h, edges[:, 0]) + gather(h, edges[:, 1])) * 0.5, batch.edge_pairs


def vn_loss_term(u: Tensor, batch: GraphBatch, n_virtual: int, weights: LossWeights, rng=None) -> Tensor:
    """Mean over meshes of the virtual-node kernel loss against the (subsampled) input positions."""
    x = batch.coords[:, 0, :]
    terms = None
    for g in range(batch.n_graphs):
        xs = x[batch.graph_slice(g)]
        sigma = weights.sigma if weights.sigma is not None else default_sigma(xs)
        idx = subsample_indices(len(xs), VN_SUBSAMPLE, rng)
        ug = u[g * n_virtual : (g + 1) * n_virtual]
        term = vn_reg_loss(ug, xs[idx], sigma, weights.w_vv, weights.w_rv)
        terms = term if terms is None else terms + term
    return terms * (1.0 / batch.n_graphs)


def batch_loss(
    model: Model,
    batch: GraphBatch,
    weights: LossWeights,
    rng=None,
    train: bool = False,
) -> tuple[Tensor, dict]:
    """Forward pass and the total objective; returns ``(loss, float parts)``."""
    cfg = model.config
    level = cfg.task_level
    targets = batch_targets(batch, level)
    out = model(batch, rng=rng, train=train)
    parts = {"pred": prediction_loss(out.logits, targets)}
    emb, pairs = level_embeddings(out.aux["embeddings"], batch, level)
    parts["cbl"] = boundary_contrast_loss(emb, targets, pairs)
    continuity = level == "edge"
    if continuity:
        parts["cont"] = continuity_loss(out.logits, batch.edge_pairs)
    if cfg.variant == "sra":
        parts["div"], parts["eq"] = sra_reg_terms(out.aux["A"], batch.node_offsets)
    elif cfg.variant == "vn":
        parts["vn"] = vn_loss_term(out.aux["u"], batch, cfg.V_virtual, weights, rng if train else None)
    loss = total_loss(cfg.variant, parts, weights, continuity)
    return loss, {k: float(v.data) for k, v in parts.items()}


def augment_batch(batch: GraphBatch, rng: np.random.Generator) -> GraphBatch:
    """Independent random rigid motion of every mesh's coordinate channels.

    Positions (channel 0) move by ``R x + t``; the remaining channels are
    directions and only rotate.
    """
    coords = batch.coords.copy()
    for g in range(batch.n_graphs):
        s = batch.graph_slice(g)
        R, t = sample_augmentation(rng)
        coords[s] = coords[s] @ R.T
        coords[s, 0] += t
    return replace(batch, coords=coords, _cache=batch._cache)


def mean_loss(model: Model, batches, weights: LossWeights) -> float:
    """Evaluation-mode loss averaged over batches."""
    vals = [float(batch_loss(model, b, weights)[0].data) for b in batches]
    return float(np.mean(vals))


def make_batches(samples, batch_size: int, seed: int) -> list[GraphBatch]:
    """Fixed seeded partition of the samples into batches (built once, reused every epoch)."""
    if not samples:
        return []
    order = np.random.default_rng(seed).permutation(len(samples))
    groups = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    return [batch_samples([samples[i] for i in grp]) for grp in groups]


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val: float | None = None
    best_state: dict | None = None


LAST = "last"
BEST = "best"


def _save_state(out_dir: Path, model, optimizer, scheduler, rng, epoch, history, best_epoch, best_val, config):
    extra = {
        "rng_state": rng.bit_generator.state,
        "scheduler": scheduler.state(),
        "history": history,
        "best_epoch": best_epoch,
        "best_val": best_val,
        "train_config": asdict(config),
    }
    arrays = {"opt/" + k: v for k, v in optimizer.state_arrays().items()}
    save_checkpoint(out_dir / LAST, model, epoch, extra, arrays)


def train_loop(
    model: Model,
    train_samples,
    config: TrainConfig,
    val_samples=None,
    weights: LossWeights | None = None,
    out_dir=None,
    resume: bool = False,
    restore_best: bool = True,
    log=None,
) -> TrainResult:
    """Train ``model`` in place.

    Each epoch visits the fixed batches in a freshly shuffled order. Every
    ``validate_every`` epochs the evaluation-mode loss on ``val_samples`` (the
    training samples when none are given) drives the plateau scheduler and the
    best-state tracking. With ``out_dir`` the state after every epoch goes to
    ``out_dir/last`` and the best weights to ``out_dir/best``; ``resume``
    continues from ``out_dir/last`` and reproduces an uninterrupted run exactly.
    """
    tune_allocator()
    weights = weights or LossWeights()
    out_dir = Path(out_dir) if out_dir is not None else None
    train_batches = make_batches(list(train_samples), config.batch_size, config.seed)
    val_batches = make_batches(list(val_samples), config.batch_size, config.seed) if val_samples else train_batches
    if not train_batches:
        raise ValueError("no training samples")

    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(model.parameters(), config)
    scheduler = PlateauScheduler.from_config(config)
    history: list[dict] = []
    best_epoch, best_val, best_state = None, None, None
    start = 1

    if resume:
        if out_dir is None or not (out_dir / LAST).exists():
            raise FileNotFoundError("resume needs an existing out_dir/last checkpoint")
        saved, manifest, arrays = load_checkpoint(out_dir / LAST)
        model.load_state_dict(saved.state_dict())
        extra = manifest["extra"]
        rng.bit_generator.state = extra["rng_state"]
        scheduler.load_state(extra["scheduler"])
        optimizer.load_state_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("opt/")})
        history = list(extra["history"])
        best_epoch, best_val = extra["best_epoch"], extra["best_val"]
        if best_epoch is not None and (out_dir / BEST).exists():
            best_state = load_checkpoint(out_dir / BEST)[0].state_dict()
        start = manifest["epoch"] + 1

    for epoch in range(start, config.epochs + 1):
        losses = []
        for bi in rng.permutation(len(train_batches)):
            batch = train_batches[bi]
            if config.augment:
                batch = augment_batch(batch, rng)
            optimizer.zero_grad()
            loss, _ = batch_loss(model, batch, weights, rng=rng, train=True)
            loss.backward()
            optimizer.step(scheduler.lr)
            losses.append(float(loss.data))
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": scheduler.lr, "val_loss": None}
        if epoch % config.validate_every == 0 or epoch == config.epochs:
            val = mean_loss(model, val_batches, weights)
            record["val_loss"] = val
            if best_val is None or val < best_val:
                best_epoch, best_val, best_state = epoch, val, model.state_dict()
                if out_dir is not None:
                    save_checkpoint(out_dir / BEST, model, epoch, {"val_loss": val})
            scheduler.step(val)
        history.append(record)
        if log is not None:
            log(record)
        if out_dir is not None:
            _save_state(out_dir, model, optimizer, scheduler, rng, epoch, history, best_epoch, best_val, config)

    if restore_best and best_state is not None:
        model.load_state_dict(best_state)
    if out_dir is not None:
        (out_dir / "history.json").write_text(json.dumps(history, indent=1))
    return TrainResult(model, history, best_epoch, best_val, best_state)
