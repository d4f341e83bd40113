"""Neural-network ops on top of the core tensor ops."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, as_tensor, gather, segment_mean, segment_sum, sqrt


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # sigmoid via in-place ufuncs; exp overflow for very negative x gives s = 0
    s = np.negative(x)
    with np.errstate(over="ignore"):
        np.exp(s, out=s)
    s += 1.0
    np.reciprocal(s, out=s)

    def vjp(g):
        d = 1.0 - s
        d *= x
        d += 1.0
        d *= s
        d *= g
        return (d,)

    return Tensor._make(x * s, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return Tensor._make(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``.

    ``weights`` optionally gives one weight per class; the mean is then weighted.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or t.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs targets {t.shape}")
    n, c = logits.shape
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)[t]
    total = w.sum()
    rows = np.arange(n)
    loss = -(w * logp[rows, t]).sum() / total

    def vjp(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        return (g * p * (w / total)[:, None],)

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


def dropout(a, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    a = as_tensor(a)
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return a * keep


def layer_norm(a, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last (feature) axis."""
    a = as_tensor(a)
    mu = a.mean(axis=-1, keepdims=True)
    c = a - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    out = c / sqrt(var + eps)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def node_norm(a, graph_ids, n_graphs: int, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise each feature over the nodes of its own graph, then apply an affine map.

    Stands in for batch normalisation when a batch holds a single graph.
    """
    a = as_tensor(a)
    ids = np.asarray(graph_ids, dtype=np.int64)
    mu = gather(segment_mean(a, ids, n_graphs), ids)
    c = a - mu
    var = gather(segment_mean(c * c, ids, n_graphs), ids)
    out = c / sqrt(var + eps)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


__all__ = [
    "silu",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "dropout",
    "layer_norm",
    "node_norm",
    "segment_sum",
    "segment_mean",
]
