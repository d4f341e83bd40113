"""AdamW with global-norm clipping, a plateau learning-rate schedule and k-fold splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor
from ..errors import NonFiniteGradient, TooFewMeshes


@dataclass(frozen=True)
class TrainConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    lr_init: float = 1e-3
    plateau_factor: float = 0.6
    plateau_patience: int = 3
    lr_min: float = 1e-5
    grad_clip: float = 1.0
    epochs: int = 100
    validate_every: int = 5
    batch_size: int = 1
    seed: int = 0
    augment: bool = False

    @classmethod
    def for_dataset(cls, tag: str, **overrides) -> "TrainConfig":
        base = {"batch_size": 8} if tag == "liver" else {}
        base["augment"] = tag in ("teeth3ds", "iosseg", "liver")
        base.update(overrides)
        return cls(**base)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def clip_by_global_norm(grads, max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale every gradient by ``min(1, max_norm / ||g||)``; returns the clipped list and the raw norm."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NonFiniteGradient("gradient norm is not finite")
    scale = min(1.0, max_norm / norm) if norm > 0 else 1.0
    return [g * scale for g in grads], norm


@dataclass
class AdamWState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params, grads, state: AdamWState, lr: float, config: TrainConfig) -> AdamWState:
    """One in-place AdamW update of ``params`` (arrays) after clipping ``grads``.

    Weight decay is decoupled: ``p <- p - lr * wd * p`` happens alongside the
    bias-corrected Adam step.
    """
    grads = [np.asarray(g) for g in grads]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
    if config.grad_clip is not None and config.grad_clip > 0:
        grads, _ = clip_by_global_norm(grads, config.grad_clip)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * config.weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return state


class AdamW:
    """Optimizer over :class:`Tensor` parameters; reads and clears ``.grad``."""

    def __init__(self, params: list[Tensor], config: TrainConfig):
        self.params = params
        self.config = config
        self.state = AdamWState()

    def step(self, lr: float) -> float:
        """Apply one update and return the pre-clip gradient norm."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = global_norm(grads)
        adamw_step([p.data for p in self.params], grads, self.state, lr, self.config)
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.asarray(self.state.step)}
        for i, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.state.step = int(arrays["step"])
        n = len(self.params)
        if "m0" in arrays:
            self.state.m = [np.array(arrays[f"m{i}"]) for i in range(n)]
            self.state.v = [np.array(arrays[f"v{i}"]) for i in range(n)]
        else:
            self.state.m, self.state.v = [], []


def plateau_schedule(
    history,
    lr: float,
    factor: float = 0.6,
    patience: int = 3,
    lr_min: float = 1e-5,
) -> float:
    """Learning rate after the latest validation in ``history`` (lower is better).

    The rate drops by ``factor`` each time ``patience`` consecutive validations
    fail to improve on the best earlier value; it never goes below ``lr_min``.
    """
    h = list(history)
    if len(h) <= patience:
        return lr
    best = np.inf
    bad = 0
    for x in h:
        if x < best:
            best, bad = x, 0
        else:
            bad += 1
    if bad and bad % patience == 0:
        return max(lr * factor, lr_min)
    return lr


class PlateauScheduler:
    """Stateful form of :func:`plateau_schedule`."""

    def __init__(self, lr: float, factor: float = 0.6, patience: int = 3, lr_min: float = 1e-5):
        self.lr = lr
        self.factor, self.patience, self.lr_min = factor, patience, lr_min
        self.history: list[float] = []

    @classmethod
    def from_config(cls, config: TrainConfig) -> "PlateauScheduler":
        return cls(config.lr_init, config.plateau_factor, config.plateau_patience, config.lr_min)

    def step(self, metric: float) -> float:
        self.history.append(float(metric))
        self.lr = plateau_schedule(self.history, self.lr, self.factor, self.patience, self.lr_min)
        return self.lr

    def state(self) -> dict:
        return {"lr": self.lr, "history": list(self.history)}

    def load_state(self, state: dict) -> None:
        self.lr = float(state["lr"])
        self.history = [float(x) for x in state["history"]]


def kfold_split(mesh_ids, k: int = 5, seed: int = 0) -> list[list]:
    """Deterministic shuffled partition into ``k`` folds whose sizes differ by at most one."""
    ids = list(mesh_ids)
    if k < 1 or len(ids) < k:
        raise TooFewMeshes(f"{len(ids)} meshes cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[i] for i in part] for part in np.array_split(perm, k)]


def train_test_split(mesh_ids, test_fraction: float = 0.2, seed: int = 0) -> tuple[list, list]:
    """Single shuffled split (used where a dataset ships one fixed split)."""
    ids = list(mesh_ids)
    n_test = int(round(len(ids) * test_fraction))
    if len(ids) < 2 or n_test < 1 or n_test >= len(ids):
        raise TooFewMeshes(f"cannot split {len(ids)} meshes with test fraction {test_fraction}")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [ids[i] for i in perm[n_test:]], [ids[i] for i in perm[:n_test]]
