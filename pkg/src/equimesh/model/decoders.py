"""Per-vertex, per-face and per-edge classification heads."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, concat, gather, sqnorm, sqrt
from .batch import GraphBatch
from .modules import MLP, Module

DEC_HIDDEN = (128, 128, 128)
PSI_HIDDEN = 128
PSI_OUT = 16


class NodeDecoder(Module):
    def __init__(self, hidden: int, n_classes: int, rng: np.random.Generator, p_drop: float = 0.1):
        self.mlp = MLP([hidden, *DEC_HIDDEN, n_classes], rng, p_drop=p_drop)

    def __call__(self, h: Tensor, rng=None, train: bool = False) -> Tensor:
        return self.mlp(h, rng, train)

    def faces(self, h: Tensor, batch: GraphBatch, rng=None, train: bool = False) -> Tensor:
        """Face logits from the mean embedding of the three corners."""
        f = batch.faces
        mean = (gather(h, f[:, 0]) + gather(h, f[:, 1]) + gather(h, f[:, 2])) * (1.0 / 3.0)
        return self.mlp(mean, rng, train)


class EdgeDecoder(Module):
    """Logits for directed edge ``j -> i`` from ``[h_j, h_i, e_ji, psi(|x_j - x_i|)]``."""

    def __init__(self, hidden: int, edge_dim: int, n_classes: int, rng: np.random.Generator, p_drop: float = 0.1):
        self.psi = MLP([1, PSI_HIDDEN, PSI_OUT], rng)
        self.mlp = MLP([2 * hidden + edge_dim + PSI_OUT, *DEC_HIDDEN, n_classes], rng, p_drop=p_drop)

    def __call__(self, h: Tensor, X: Tensor, batch: GraphBatch, rng=None, train: bool = False) -> Tensor:
        pos = X[:, 0, :]
        dist = sqrt(sqnorm(gather(pos, batch.src) - gather(pos, batch.dst)) + 1e-12)
        z = concat(
            [gather(h, batch.src), gather(h, batch.dst), Tensor(batch.edge_scalars), self.psi(dist)],
            axis=1,
        )
        return self.mlp(z, rng, train)


def undirected_logits(directed_logits: np.ndarray, edge_index: np.ndarray, n_undirected: int) -> np.ndarray:
    """Average the two directions of every undirected edge.

    ``edge_index[d]`` is the undirected id of directed edge ``d``.
    """
    out = np.zeros((n_undirected, directed_logits.shape[1]))
    np.add.at(out, edge_index, directed_logits)
    counts = np.bincount(edge_index, minlength=n_undirected)[:, None]
    return out / np.maximum(counts, 1)
