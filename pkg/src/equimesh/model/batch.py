"""Disjoint-union batching of featurised meshes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..autodiff import segment_matrix
from ..features import FeatureSet


@dataclass(eq=False)
class GraphBatch:
    """Several meshes concatenated into one graph with per-graph offsets.

    ``coords`` is stored as ``N x C x 3`` (channel-major); directed edge
    ``(src, dst)`` carries a message from ``src`` into ``dst``. Each face yields
    three corner triples ``(fi, fj, fk)`` that are cyclic rotations of the
    stored winding, so every corner sees the same oriented normal.
    """

    node_scalars: np.ndarray
    coords: np.ndarray
    edge_scalars: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    faces: np.ndarray
    graph_ids: np.ndarray
    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    face_offsets: np.ndarray
    node_labels: np.ndarray | None = None
    edge_labels: np.ndarray | None = None
    face_labels: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.node_scalars)

    @property
    def n_graphs(self) -> int:
        return len(self.node_offsets) - 1

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if "corners" not in self._cache:
            f = self.faces
            fi = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
            fj = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
            fk = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
            self._cache["corners"] = (fi, fj, fk)
        return self._cache["corners"]

    def seg(self, name: str):
        """Cached segment matrix mapping the rows indexed by ``name`` onto nodes."""
        key = "seg:" + name
        if key not in self._cache:
            idx = {"src": self.src, "dst": self.dst}.get(name)
            if idx is None:
                fi, fj, fk = self.corners
                idx = {"fi": fi, "fj": fj, "fk": fk}[name]
            self._cache[key] = segment_matrix(idx, self.n_nodes)
        return self._cache[key]

    def vn_pairs(self, n_virtual: int) -> tuple[np.ndarray, np.ndarray]:
        """All (node, virtual node) pairs within each graph; virtual ids are ``graph * V + k``."""
        key = ("vn", n_virtual)
        if key not in self._cache:
            nodes, virt = [], []
            for g in range(self.n_graphs):
                a, b = self.node_offsets[g], self.node_offsets[g + 1]
                n = np.arange(a, b)
                nodes.append(np.repeat(n, n_virtual))
                virt.append(np.tile(g * n_virtual + np.arange(n_virtual), len(n)))
            self._cache[key] = (np.concatenate(nodes), np.concatenate(virt))
        return self._cache[key]

    @property
    def undirected(self) -> tuple[np.ndarray, np.ndarray]:
        """``(edges U x 2, index)`` where ``index[d]`` is the undirected row of directed edge ``d``.

        Rows are sorted lexicographically, which matches the per-mesh
        ``AdjacencyIndex.undirected_edges`` order shifted by the node offsets.
        """
        if "undirected" not in self._cache:
            key = np.sort(np.stack([self.src, self.dst], axis=1), axis=1)
            edges, index = np.unique(key, axis=0, return_inverse=True)
            self._cache["undirected"] = (edges, index.ravel())
        return self._cache["undirected"]

    @property
    def edge_pairs(self) -> np.ndarray:
        """Pairs ``(a, b)``, ``a < b``, of undirected edges sharing a vertex."""
        if "edge_pairs" not in self._cache:
            self._cache["edge_pairs"] = edge_adjacency_pairs(self.undirected[0], self.n_nodes)
        return self._cache["edge_pairs"]

    def with_dtype(self, dtype) -> "GraphBatch":
        """Same topology (and caches) with the real-valued arrays cast to ``dtype``."""
        dtype = np.dtype(dtype)
        if self.node_scalars.dtype == dtype:
            return self
        return replace(
            self,
            node_scalars=self.node_scalars.astype(dtype),
            coords=self.coords.astype(dtype),
            edge_scalars=self.edge_scalars.astype(dtype),
            _cache=self._cache,
        )

    def graph_slice(self, g: int) -> slice:
        return slice(int(self.node_offsets[g]), int(self.node_offsets[g + 1]))


def edge_adjacency_pairs(edges: np.ndarray, n_nodes: int) -> np.ndarray:
    """All unordered pairs of edges that share an endpoint, each listed once."""
    ends = np.concatenate([edges[:, 0], edges[:, 1]])
    ids = np.concatenate([np.arange(len(edges)), np.arange(len(edges))])
    order = np.lexsort((ids, ends))
    ends, ids = ends[order], ids[order]
    bounds = np.concatenate([[0], np.cumsum(np.bincount(ends, minlength=n_nodes))])
    out = []
    for v in range(n_nodes):
        inc = ids[bounds[v] : bounds[v + 1]]
        if len(inc) > 1:
            a, b = np.triu_indices(len(inc), k=1)
            out.append(np.stack([inc[a], inc[b]], axis=1))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    # two distinct edges share at most one vertex unless they are parallel copies
    return np.unique(np.concatenate(out), axis=0)


def make_batch(features: list[FeatureSet], node_labels=None, edge_labels=None, face_labels=None) -> GraphBatch:
    """Concatenate feature sets; label lists are per-graph arrays or ``None``."""
    n_nodes = [f.n_nodes for f in features]
    n_edges = [len(f.directed_edges) for f in features]
    n_faces = [len(f.faces) for f in features]
    node_off = np.concatenate([[0], np.cumsum(n_nodes)]).astype(np.int64)
    edge_off = np.concatenate([[0], np.cumsum(n_edges)]).astype(np.int64)
    face_off = np.concatenate([[0], np.cumsum(n_faces)]).astype(np.int64)
    edges = np.concatenate([f.directed_edges + node_off[g] for g, f in enumerate(features)])
    faces = np.concatenate([f.faces + node_off[g] for g, f in enumerate(features)])

    def cat(labels):
        if labels is None or any(x is None for x in labels):
            return None
        return np.concatenate([np.asarray(x, dtype=np.int64) for x in labels])

    return GraphBatch(
        node_scalars=np.concatenate([f.node_scalars for f in features]),
        coords=np.concatenate([np.swapaxes(f.coord_state, 1, 2) for f in features]),
        edge_scalars=np.concatenate([f.edge_scalars for f in features]),
        src=edges[:, 0].copy(),
        dst=edges[:, 1].copy(),
        faces=faces,
        graph_ids=np.repeat(np.arange(len(features)), n_nodes),
        node_offsets=node_off,
        edge_offsets=edge_off,
        face_offsets=face_off,
        node_labels=cat(node_labels),
        edge_labels=cat(edge_labels),
        face_labels=cat(face_labels),
    )
