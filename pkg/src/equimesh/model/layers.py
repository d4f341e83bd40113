"""Equivariant message-passing layers and the two global-context augmentations.

Coordinates travel as ``N x C x 3`` tensors. Channel 0 holds positions and
transforms as ``R x + t``; the remaining channels (normals) transform as ``R x``.
Only invariant scalars (squared lengths, cross-product magnitudes) reach the
scalar MLPs, and vectors only appear multiplied by scalar gates.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import (
    Tensor,
    concat,
    cross,
    gather,
    layer_norm,
    segment_mean,
    segment_sum,
    softmax,
    sqnorm,
    sqrt,
    transpose,
)
from ..errors import ShapeMismatch
from .batch import GraphBatch
from .modules import MLP, Linear, Module, NodeNorm, SplitMLP, _param

AREA_EPS = 1e-10
GATE_SCALE = 1e-2
GATE_HIDDEN = 32


def _check_coords(h: Tensor, X: Tensor, batch: GraphBatch, channels: int) -> None:
    n = batch.n_nodes
    if h.shape[0] != n or X.shape != (n, channels, 3):
        raise ShapeMismatch(f"h {h.shape} / X {X.shape} do not match {n} nodes with {channels} channels")


class _LocalBranches(Module):
    """Edge and face messages plus their coordinate increments (shared by EMNN and VN layers)."""

    def __init__(self, hidden: int, edge_dim: int, channels: int, rng: np.random.Generator):
        H, C = hidden, channels
        self.phi_e = SplitMLP([H, H, edge_dim + C], [H, H], rng, final_act=True)
        self.phi_f = SplitMLP([H, H, C], [H, H], rng, final_act=True)
        self.phi_x = MLP([H, GATE_HIDDEN, C], rng, final_scale=GATE_SCALE)
        self.phi_n = MLP([H, GATE_HIDDEN, C], rng, final_scale=GATE_SCALE)
        self.channels = C

    def __call__(self, h: Tensor, X: Tensor, batch: GraphBatch):
        C, E = self.channels, batch.n_edges
        n = batch.n_nodes
        s_src, s_dst = batch.seg("src"), batch.seg("dst")
        # edge j -> i with i = dst, j = src
        diff = gather(X, batch.dst, s_dst) - gather(X, batch.src, s_src)
        d2 = sqnorm(diff).reshape(E, C)
        pe = self.phi_e.first
        pre = (
            gather(pe.project(0, h), batch.dst, s_dst)
            + gather(pe.project(1, h), batch.src, s_src)
            + pe.project(2, concat([Tensor(batch.edge_scalars), d2], axis=1))
        )
        m_e = self.phi_e.finish(pre)
        agg_e = segment_sum(m_e, batch.dst, n, s_dst)
        dx_e = segment_sum(diff * self.phi_x(m_e).reshape(E, C, 1), batch.dst, n, s_dst)

        fi, fj, fk = batch.corners
        s_fi, s_fj, s_fk = batch.seg("fi"), batch.seg("fj"), batch.seg("fk")
        xi = gather(X, fi, s_fi)
        normal = cross(gather(X, fj, s_fj) - xi, gather(X, fk, s_fk) - xi)
        nf = len(fi)
        area = sqrt(sqnorm(normal).reshape(nf, C) + AREA_EPS)
        pf = self.phi_f.first
        hjk = pf.project(1, h)
        pre_f = gather(pf.project(0, h), fi, s_fi) + gather(hjk, fj, s_fj) + gather(hjk, fk, s_fk) + pf.project(2, area)
        m_f = self.phi_f.finish(pre_f)
        agg_f = segment_sum(m_f, fi, n, s_fi)
        dx_f = segment_sum(normal * self.phi_n(m_f).reshape(nf, C, 1), fi, n, s_fi)
        return agg_e, agg_f, dx_e, dx_f

    def zero_gates(self) -> None:
        self.phi_x.last.zero_()
        self.phi_n.last.zero_()


class EMNNLayer(Module):
    """One equivariant mesh message-passing step ``(h, X) -> (h', X')``."""

    def __init__(self, hidden_in: int, hidden_out: int, edge_dim: int, channels: int, rng: np.random.Generator):
        if hidden_in != hidden_out:
            self.lift = Linear(hidden_in, hidden_out, rng)
        else:
            self.lift = None
        H = hidden_out
        self.branches = _LocalBranches(H, edge_dim, channels, rng)
        self.phi_h = MLP([3 * H, H, H], rng)
        self.norm = NodeNorm(H)
        self.channels = channels

    def __call__(self, h: Tensor, X: Tensor, batch: GraphBatch):
        _check_coords(h, X, batch, self.channels)
        if self.lift is not None:
            h = self.lift(h)
        agg_e, agg_f, dx_e, dx_f = self.branches(h, X, batch)
        h_new = self.norm(self.phi_h(concat([h, agg_e, agg_f], axis=1)), batch.graph_ids, batch.n_graphs)
        return h_new, X + dx_e + dx_f


class GlobalNode(Module):
    """Per-graph token built from mean node features; scalar-only."""

    def __init__(self, hidden: int, rng: np.random.Generator):
        H = hidden
        self.phi_g = MLP([H, H, H], rng)
        self.phi_in = SplitMLP([H, H], [H, H], rng)

    def __call__(self, h: Tensor, g: Tensor | None, batch: GraphBatch):
        ids, G = batch.graph_ids, batch.n_graphs
        token = self.phi_g(segment_mean(h, ids, G))
        g = token if g is None else g + token
        p = self.phi_in.first
        h = h + self.phi_in.finish(p.project(0, h) + gather(p.project(1, g), ids))
        return h, g


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = _param(np.ones(dim))
        self.beta = _param(np.zeros(dim))

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta)


class TransformerMixer(Module):
    """Single post-norm transformer encoder layer over ``G x K x H`` token stacks."""

    def __init__(self, hidden: int, rng: np.random.Generator, n_heads: int = 4, ffn: int = 256):
        if hidden % n_heads:
            raise ValueError("hidden width must be divisible by the number of heads")
        self.q = Linear(hidden, hidden, rng)
        self.k = Linear(hidden, hidden, rng)
        self.v = Linear(hidden, hidden, rng)
        self.out = Linear(hidden, hidden, rng)
        self.ln1 = LayerNorm(hidden)
        self.ffn = MLP([hidden, ffn, hidden], rng)
        self.ln2 = LayerNorm(hidden)
        self.n_heads = n_heads

    def _heads(self, x, G, K):
        d = x.shape[-1] // self.n_heads
        return transpose(x.reshape(G, K, self.n_heads, d), (0, 2, 1, 3))

    def __call__(self, r: Tensor) -> Tensor:
        G, K, H = r.shape
        d = H // self.n_heads
        q, k, v = (self._heads(lin(r), G, K) for lin in (self.q, self.k, self.v))
        att = softmax((q @ transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d)), axis=-1)
        mixed = transpose(att @ v, (0, 2, 1, 3)).reshape(G, K, H)
        x = self.ln1(r + self.out(mixed))
        return self.ln2(x + self.ffn(x))


def _centroids(X: Tensor, batch: GraphBatch) -> Tensor:
    """Per-graph mean of the position channel, ``G x 3``."""
    return segment_mean(X[:, 0, :], batch.graph_ids, batch.n_graphs)


class SRA(Module):
    """Soft regional aggregator: soft partition into K tokens, global mixing, scatter back."""

    def __init__(self, hidden: int, n_regions: int, rng: np.random.Generator, alpha: float = 0.1):
        H = hidden
        self.phi_a = MLP([H + 1, H, n_regions], rng)
        self.mixer = TransformerMixer(H, rng)
        self.phi_proj = Linear(H, H, rng)
        self.alpha = _param(np.array([alpha]))
        self.n_regions = n_regions

    def __call__(self, h: Tensor, X: Tensor, batch: GraphBatch):
        ids, K = batch.graph_ids, self.n_regions
        rel = X[:, 0, :] - gather(_centroids(X, batch), ids)
        dist = sqrt(sqnorm(rel) + AREA_EPS)
        A = softmax(self.phi_a(concat([h, dist], axis=1)), axis=1)
        slices = [batch.graph_slice(g) for g in range(batch.n_graphs)]
        tokens = concat([(A[s].T @ h[s]).reshape(1, K, -1) for s in slices], axis=0)
        proj = self.phi_proj(self.mixer(tokens))
        back = concat([A[s] @ proj[g] for g, s in enumerate(slices)], axis=0)
        return h + self.alpha * back, A


class VNLayer(Module):
    """EMNN step with V virtual nodes per graph exchanging messages with every real vertex."""

    def __init__(self, hidden_in: int, hidden_out: int, edge_dim: int, channels: int, rng: np.random.Generator):
        self.lift = Linear(hidden_in, hidden_out, rng) if hidden_in != hidden_out else None
        H = hidden_out
        self.branches = _LocalBranches(H, edge_dim, channels, rng)
        self.phi_rv = SplitMLP([H, H, 2], [H, H], rng, final_act=True)
        self.phi_virt_to_node = MLP([H, GATE_HIDDEN, 1], rng, final_scale=GATE_SCALE)
        self.phi_node_to_virt = MLP([H, GATE_HIDDEN, 1], rng, final_scale=GATE_SCALE)
        self.phi_v = SplitMLP([H, H], [H, H], rng)
        self.phi_h = MLP([4 * H, H, H], rng)
        self.norm = NodeNorm(H)
        self.channels = channels

    def __call__(self, h: Tensor, X: Tensor, v: Tensor, u: Tensor, batch: GraphBatch):
        """``v`` is ``(G*V) x H`` and ``u`` is ``(G*V) x 3``, grouped by graph."""
        _check_coords(h, X, batch, self.channels)
        G = batch.n_graphs
        if v.shape[0] % G or u.shape != (v.shape[0], 3):
            raise ShapeMismatch(f"virtual states v {v.shape} / u {u.shape} do not match {G} graphs")
        V = v.shape[0] // G
        if self.lift is not None:
            h = self.lift(h)
        agg_e, agg_f, dx_e, dx_f = self.branches(h, X, batch)

        n = batch.n_nodes
        node, virt = batch.vn_pairs(V)
        vgraph = np.repeat(np.arange(G), V)
        xbar = _centroids(X, batch)
        m_v = sqnorm(u - gather(xbar, vgraph))
        pos = X[:, 0, :]
        delta = gather(u, virt) - gather(pos, node)  # u_k - x_i
        d2 = sqnorm(delta)
        p = self.phi_rv.first
        pre = gather(p.project(0, h), node) + gather(p.project(1, v), virt) + p.project(2, concat([d2, gather(m_v, virt)], axis=1))
        m_ik = self.phi_rv.finish(pre)

        inv_v = 1.0 / V
        m_virt = segment_sum(m_ik, node, n) * inv_v
        dx_virt = segment_sum(delta * self.phi_virt_to_node(m_ik), node, n) * (-inv_v)
        counts = np.diff(batch.node_offsets).astype(np.float64)
        inv_n = Tensor(np.repeat(1.0 / counts, V)[:, None].astype(h.dtype))
        m_bar = segment_sum(m_ik, virt, G * V) * inv_n
        du = segment_sum(delta * self.phi_node_to_virt(m_ik), virt, G * V) * inv_n

        q = self.phi_v.first
        v_new = v + self.phi_v.finish(q.project(0, v) + q.project(1, m_bar))
        pad = Tensor(np.zeros((n, self.channels - 1, 3), dtype=h.dtype)) if self.channels > 1 else None
        dx_virt = dx_virt.reshape(n, 1, 3) if pad is None else concat([dx_virt.reshape(n, 1, 3), pad], axis=1)
        X_new = X + dx_e + dx_f + dx_virt
        u_new = u + du
        h_new = self.norm(self.phi_h(concat([h, agg_e, agg_f, m_virt], axis=1)), batch.graph_ids, G)
        return h_new, X_new, v_new, u_new

    def zero_virtual_gates(self) -> None:
        self.phi_virt_to_node.last.zero_()
        self.phi_node_to_virt.last.zero_()
