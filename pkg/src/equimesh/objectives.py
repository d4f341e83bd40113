"""Training objectives: segmentation, boundary contrast, SRA and VN regularisers, edge continuity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat, cross_entropy, exp, gather, norm, relu, softmax, sqnorm, sqrt
from .errors import EmptyTargets, MissingPart

DICE_EPS = 1e-8
COS_EPS = 1e-12
EQ_EPS = 1e-8
COL_EPS = 1e-12
MARGIN_BOUNDARY = 0.3
MARGIN_SAME = 0.5
VN_SUBSAMPLE = 256
VN_SIGMA_FRACTION = 0.2


@dataclass(frozen=True)
class LossWeights:
    lambda_pred: float = 1.0
    lambda_cbl: float = 10.0
    lambda_div: float = 1.0
    lambda_eq: float = 1.0
    w_vv: float = 1.0
    w_rv: float = 1.0
    lambda_cont: float = 1.0
    sigma: float | None = None

    def __post_init__(self):
        for name, val in vars(self).items():
            if val is not None and val < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")

    @classmethod
    def for_dataset(cls, tag: str) -> "LossWeights":
        return cls(lambda_cbl=1.0) if tag == "liver" else cls()


def soft_dice(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean soft Dice over the classes present in ``targets``."""
    t = np.asarray(targets, dtype=np.int64)
    n, c = probs.shape
    onehot = np.zeros((n, c), dtype=probs.dtype)
    onehot[np.arange(n), t] = 1.0
    present = np.flatnonzero(onehot.sum(axis=0) > 0)
    inter = (probs * onehot).sum(axis=0)
    denom = probs.sum(axis=0) + onehot.sum(axis=0) + DICE_EPS
    dice = (inter * 2.0) / denom
    return dice[present].mean()


def prediction_loss(logits, targets, class_weights=None) -> Tensor:
    """Cross-entropy plus ``1 - soft Dice``; a boundary-aware stand-in for the segmentation loss."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    if t.size == 0:
        raise EmptyTargets("prediction loss needs at least one target")
    ce = cross_entropy(logits, t, class_weights)
    return ce + (1.0 - soft_dice(softmax(logits, axis=1), t))


def boundary_contrast_loss(
    embeddings,
    labels,
    pairs: np.ndarray,
    margin: float = MARGIN_BOUNDARY,
    margin_same: float = MARGIN_SAME,
) -> Tensor:
    """Hinge on cosine similarity over adjacent pairs.

    Pairs straddling a label boundary pay ``max(0, cos - margin)``; same-label
    pairs pay ``max(0, margin_same - cos)``. The mean runs over all pairs, and
    the loss is 0 when no pair straddles a boundary.
    """
    emb = as_tensor(embeddings)
    lab = np.asarray(labels)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    differ = lab[pairs[:, 0]] != lab[pairs[:, 1]]
    if not differ.any():
        return Tensor(np.zeros((), dtype=emb.dtype))
    unit = emb / norm(emb, COS_EPS)
    cos = (gather(unit, pairs[:, 0]) * gather(unit, pairs[:, 1])).sum(axis=1)
    sign = np.where(differ, 1.0, -1.0)
    offset = np.where(differ, -margin, margin_same)
    return relu(cos * sign + offset).mean()


def diversity_loss(A) -> Tensor:
    """``||At^T At - I||_F^2`` with column-normalised ``At``."""
    A = as_tensor(A)
    cols = sqrt((A * A).sum(axis=0, keepdims=True) + COL_EPS)
    An = A / cols
    gram = An.T @ An
    resid = gram - np.eye(A.shape[1], dtype=A.dtype)
    return (resid * resid).sum()


def equal_mass_loss(A) -> Tensor:
    """Variance of the column masses over the squared mean mass."""
    A = as_tensor(A)
    mass = A.sum(axis=0)
    mbar = mass.mean()
    c = mass - mbar
    return (c * c).mean() / (mbar * mbar + EQ_EPS)


def sra_reg_terms(A, offsets=None) -> tuple[Tensor, Tensor]:
    """Per-mesh averages of ``(L_div, L_eq)``; ``offsets`` splits the rows of ``A`` by mesh."""
    A = as_tensor(A)
    offsets = np.array([0, A.shape[0]]) if offsets is None else np.asarray(offsets)
    div, eq = [], []
    for a, b in zip(offsets[:-1], offsets[1:]):
        block = A[int(a) : int(b)]
        div.append(diversity_loss(block).reshape(1))
        eq.append(equal_mass_loss(block).reshape(1))
    return concat(div, axis=0).mean(), concat(eq, axis=0).mean()


def sra_reg_loss(A, offsets=None, lambda_div: float = 1.0, lambda_eq: float = 1.0) -> Tensor:
    div, eq = sra_reg_terms(A, offsets)
    return div * lambda_div + eq * lambda_eq


def gaussian_kernel(p, q, sigma: float) -> Tensor:
    """``exp(-|p_a - q_b|^2 / 2 sigma^2)`` for every pair, shape ``len(p) x len(q)``."""
    p, q = as_tensor(p), as_tensor(q)
    ia, ib = np.meshgrid(np.arange(p.shape[0]), np.arange(q.shape[0]), indexing="ij")
    d2 = sqnorm(gather(p, ia.ravel()) - gather(q, ib.ravel())).reshape(p.shape[0], q.shape[0])
    return exp(d2 * (-0.5 / sigma**2))


def default_sigma(x: np.ndarray) -> float:
    """``0.2`` times the bounding radius (max distance from the centroid)."""
    x = np.asarray(x, dtype=np.float64)
    radius = float(np.sqrt(((x - x.mean(axis=0)) ** 2).sum(axis=1).max())) if len(x) else 0.0
    return VN_SIGMA_FRACTION * radius if radius > 0 else 1.0


def subsample_indices(n: int, size: int = VN_SUBSAMPLE, rng: np.random.Generator | None = None) -> np.ndarray:
    """All indices when ``n <= size``; otherwise a random (or evenly spaced) subset."""
    if n <= size:
        return np.arange(n)
    if rng is None:
        return np.linspace(0, n - 1, size).round().astype(np.int64)
    return np.sort(rng.choice(n, size=size, replace=False))


def vn_reg_loss(u, x, sigma: float | None = None, w_vv: float = 1.0, w_rv: float = 1.0) -> Tensor:
    """``w_vv k_vv - w_rv k_rv`` for one graph: repulsion among virtual nodes, attraction to the surface.

    ``x`` is the (already subsampled) set of surface points.
    """
    u = as_tensor(u)
    x = as_tensor(x, like=u)
    sigma = default_sigma(x.data) if sigma is None else sigma
    V = u.shape[0]
    k_rv = gaussian_kernel(x, u, sigma).mean()
    if V < 2:
        return k_rv * (-w_rv)
    kuu = gaussian_kernel(u, u, sigma)
    off = 1.0 - np.eye(V, dtype=u.dtype)
    k_vv = (kuu * off).sum() * (1.0 / (V * (V - 1)))
    return k_vv * w_vv - k_rv * w_rv


def continuity_loss(logits, pairs: np.ndarray) -> Tensor:
    """Mean squared distance between softmax predictions of adjacent edges."""
    logits = as_tensor(logits)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return Tensor(np.zeros((), dtype=logits.dtype))
    p = softmax(logits, axis=1)
    d = gather(p, pairs[:, 0]) - gather(p, pairs[:, 1])
    return (d * d).sum(axis=1).mean()


def total_loss(variant: str, parts: dict, weights: LossWeights, continuity: bool = False) -> Tensor:
    """Weighted sum of the parts required by ``variant``.

    ``parts`` keys: ``pred``, ``cbl`` always; ``cont`` when ``continuity``;
    ``div`` and ``eq`` for ``sra``; ``vn`` for ``vn``.
    """
    need = ["pred", "cbl"] + (["cont"] if continuity else [])
    need += {"base": [], "sra": ["div", "eq"], "vn": ["vn"]}[variant]
    missing = [k for k in need if k not in parts]
    if missing:
        raise MissingPart(f"{variant} loss needs parts {missing}")
    total = parts["pred"] * weights.lambda_pred + parts["cbl"] * weights.lambda_cbl
    if continuity:
        total = total + parts["cont"] * weights.lambda_cont
    if variant == "sra":
        total = total + parts["div"] * weights.lambda_div + parts["eq"] * weights.lambda_eq
    elif variant == "vn":
        total = total + parts["vn"]
    return total
