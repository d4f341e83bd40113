"""Per-vertex and per-edge input features, including PCA-derived anatomical frames."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MissingCache
from .mesh import AdjacencyIndex, FaceGeometry, Mesh, build_adjacency, face_geometry
from .spectral import SpectralBasis, hks

COPY_WEIGHT_FALLBACK = 1e-3
GEODESIC_EPS = 1e-6
PCA_DEGENERACY_RTOL = 1e-9

NODE_FEATURE_DIMS = {
    "pointwise_area": 1,
    "hks": 8,
    "dental_cyl": 3,
    "canonical_cyl": 3,
    "canonical_cart": 3,
    "fps_anchor_distances": 4,
}
EDGE_FEATURE_DIMS = {"degree_weight": 1, "copy_weight": 1, "dihedral": 1}

_BASE_NODES = ("pointwise_area", "hks")
_BASE_EDGES = ("degree_weight", "copy_weight", "dihedral")
PRESETS = {
    "intra": _BASE_NODES,
    "teeth3ds": _BASE_NODES + ("dental_cyl",),
    "iosseg": _BASE_NODES + ("dental_cyl",),
    "liver": _BASE_NODES + ("canonical_cyl", "canonical_cart", "fps_anchor_distances"),
}
EXPECTED_NODE_DIM = {"intra": 9, "teeth3ds": 12, "iosseg": 12, "liver": 19}


class DegeneratePCAWarning(UserWarning):
    """Two leading principal variances coincide; axis order falls back to index order."""


@dataclass(frozen=True)
class FeatureConfig:
    node_feature_list: tuple = _BASE_NODES
    edge_feature_list: tuple = _BASE_EDGES
    coord_channels: int = 2
    dataset_tag: str = "custom"

    @classmethod
    def preset(cls, tag: str) -> "FeatureConfig":
        if tag not in PRESETS:
            raise KeyError(f"no preset for dataset tag {tag!r}")
        return cls(node_feature_list=PRESETS[tag], dataset_tag=tag)

    @property
    def node_dim(self) -> int:
        return sum(NODE_FEATURE_DIMS[n] for n in self.node_feature_list)

    @property
    def edge_dim(self) -> int:
        return sum(EDGE_FEATURE_DIMS[n] for n in self.edge_feature_list)


@dataclass(eq=False)
class FeatureSet:
    node_scalars: np.ndarray
    edge_scalars: np.ndarray
    coord_state: np.ndarray
    directed_edges: np.ndarray
    faces: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.node_scalars)


def pointwise_area(mesh: Mesh, geometry: FaceGeometry) -> np.ndarray:
    """Mean area of the faces incident to each vertex (0 if none)."""
    total = np.zeros(mesh.n_vertices)
    count = np.zeros(mesh.n_vertices)
    for c in range(3):
        np.add.at(total, mesh.faces[:, c], geometry.face_areas)
        np.add.at(count, mesh.faces[:, c], 1.0)
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)


def dihedral_angles(geometry: FaceGeometry, adjacency: AdjacencyIndex) -> np.ndarray:
    """Angle between the unit normals of the two faces on each undirected edge; pi on boundaries."""
    pairs = adjacency.edge_face_pairs
    out = np.full(len(pairs), np.pi)
    inner = pairs[:, 1] >= 0
    n = geometry.face_normals / np.linalg.norm(geometry.face_normals, axis=1, keepdims=True)
    a, b = n[pairs[inner, 0]], n[pairs[inner, 1]]
    # atan2 stays well conditioned near 0 and pi, unlike arccos
    out[inner] = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), (a * b).sum(axis=1))
    return out


def geodesic_copy_weights(mesh: Mesh, adjacency: AdjacencyIndex, eps: float = GEODESIC_EPS) -> np.ndarray:
    """Inverse-distance weights ``(d_ij + eps)^-1`` per directed edge, normalised per target."""
    src, dst = adjacency.directed_edges[:, 0], adjacency.directed_edges[:, 1]
    d = np.linalg.norm(mesh.vertices[src] - mesh.vertices[dst], axis=1)
    w = 1.0 / (d + eps)
    tot = np.bincount(dst, weights=w, minlength=mesh.n_vertices)
    return w / tot[dst]


def edge_scalars(
    mesh: Mesh,
    geometry: FaceGeometry,
    adjacency: AdjacencyIndex,
    copy_weights: np.ndarray | None = None,
    columns: tuple = ("dihedral", "degree_weight", "copy_weight"),
) -> np.ndarray:
    """Per-directed-edge scalars in the order of ``adjacency.directed_edges``.

    Directed edge ``(source, target)``: ``degree_weight`` is ``1/deg(target)``;
    ``copy_weight`` is the supplied per-edge weight or a small constant.
    """
    cols = {}
    cols["dihedral"] = dihedral_angles(geometry, adjacency)[adjacency.edge_index]
    target = adjacency.directed_edges[:, 1]
    cols["degree_weight"] = 1.0 / adjacency.vertex_degree[target]
    if copy_weights is None:
        cols["copy_weight"] = np.full(len(target), COPY_WEIGHT_FALLBACK)
    else:
        cw = np.asarray(copy_weights, dtype=np.float64)
        if cw.shape != target.shape:
            raise DimensionMismatch(f"copy weights need one value per directed edge ({len(target)})")
        cols["copy_weight"] = cw
    return np.stack([cols[c] for c in columns], axis=1)


# -- anatomical frames ---------------------------------------------------------


def _principal_axes(centred: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Eigenvectors of the (weighted) scatter matrix, columns by descending eigenvalue."""
    if weights is None:
        S = centred.T @ centred
    else:
        S = (centred * weights[:, None]).T @ centred / weights.sum()
    evals, U = np.linalg.eigh(S)
    order = np.argsort(-evals, kind="stable")
    evals, U = evals[order], U[:, order]
    scale = max(abs(evals[0]), 1e-300)
    if (evals[0] - evals[1]) / scale < PCA_DEGENERACY_RTOL or (evals[1] - evals[2]) / scale < PCA_DEGENERACY_RTOL:
        warnings.warn("principal variances coincide; frame axes are not unique", DegeneratePCAWarning, stacklevel=3)
    return U


def _weighted_skewness(p: np.ndarray, w: np.ndarray | None = None) -> float:
    w = np.full(len(p), 1.0 / len(p)) if w is None else w / w.sum()
    mu = (w * p).sum()
    c = p - mu
    var = (w * c * c).sum()
    return float((w * c**3).sum() / max(var, 1e-300) ** 1.5)


def cart2cyl(y: np.ndarray) -> np.ndarray:
    return np.stack([np.hypot(y[:, 0], y[:, 1]), np.arctan2(y[:, 1], y[:, 0]), y[:, 2]], axis=1)


def _finish_frame(centred: np.ndarray, U: np.ndarray) -> np.ndarray:
    y = centred @ U
    y[:, 1] -= y[:, 1].min()
    return y


def dental_frame(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Frame-aligned coordinates and the frame ``U`` (columns: width, AP, vertical).

    The AP axis is oriented so a least-squares parabola of AP against width
    opens towards negative AP (incisors at the positive end); the vertical axis
    so its projections have nonnegative skewness; the width axis completes a
    right-handed frame, so a mirror image swaps left and right.
    """
    x = np.asarray(vertices, dtype=np.float64)
    centred = x - x.mean(axis=0)
    U = _principal_axes(centred)
    y = centred @ U
    quad = np.polyfit(y[:, 0], y[:, 1], 2)[0]
    if quad > 0:
        U[:, 1] = -U[:, 1]
    if _weighted_skewness(y[:, 2]) < 0:
        U[:, 2] = -U[:, 2]
    if np.linalg.det(U) < 0:
        U[:, 0] = -U[:, 0]
    return _finish_frame(centred, U), U


def dental_frame_cylindrical(mesh_or_vertices) -> np.ndarray:
    v = mesh_or_vertices.vertices if isinstance(mesh_or_vertices, Mesh) else mesh_or_vertices
    return cart2cyl(dental_frame(v)[0])


def vertex_areas(mesh: Mesh, geometry: FaceGeometry | None = None) -> np.ndarray:
    """Barycentric vertex areas (a third of every incident face).

    With these weights ``sum A_i x_i / sum A_i`` is the exact centroid of the
    piecewise-linear surface, so it does not move when the surface is refined.
    """
    geometry = geometry or face_geometry(mesh)
    out = np.zeros(mesh.n_vertices)
    for c in range(3):
        np.add.at(out, mesh.faces[:, c], geometry.face_areas / 3.0)
    return out


def liver_frame(mesh: Mesh, geometry: FaceGeometry | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted frame; first two axes oriented by nonnegative weighted skewness."""
    A = vertex_areas(mesh, geometry)
    x = mesh.vertices
    mu = (A[:, None] * x).sum(axis=0) / A.sum()
    centred = x - mu
    U = _principal_axes(centred, A)
    y = centred @ U
    for a in (0, 1):
        if _weighted_skewness(y[:, a], A) < 0:
            U[:, a] = -U[:, a]
    if np.linalg.det(U) < 0:
        U[:, 2] = -U[:, 2]
    return _finish_frame(centred, U), U


def liver_frame_cylindrical(mesh: Mesh, geometry: FaceGeometry | None = None) -> np.ndarray:
    return cart2cyl(liver_frame(mesh, geometry)[0])


def fps_anchor_distances(mesh_or_vertices) -> np.ndarray:
    """Distances to the centroid and to three farthest-point-sampled vertices.

    Sampling is seeded at the vertex farthest from the centroid; ties go to the
    smallest index.
    """
    x = mesh_or_vertices.vertices if isinstance(mesh_or_vertices, Mesh) else np.asarray(mesh_or_vertices, float)
    c = x.mean(axis=0)
    cols = [np.linalg.norm(x - c, axis=1)]
    nearest = None
    current = int(cols[0].argmax())
    for _ in range(3):
        d = np.linalg.norm(x - x[current], axis=1)
        cols.append(d)
        nearest = d if nearest is None else np.minimum(nearest, d)
        current = int(nearest.argmax())
    return np.stack(cols, axis=1)


# -- assembly ------------------------------------------------------------------


def assemble_features(
    mesh: Mesh,
    basis: SpectralBasis | None,
    config: FeatureConfig,
    adjacency: AdjacencyIndex | None = None,
    geometry: FaceGeometry | None = None,
    copy_weights: np.ndarray | None = None,
) -> FeatureSet:
    """Concatenate the configured features for a cleaned, normalised mesh."""
    adjacency = adjacency or build_adjacency(mesh)
    geometry = geometry or face_geometry(mesh)
    blocks = []
    liver = None
    for name in config.node_feature_list:
        if name == "pointwise_area":
            blocks.append(pointwise_area(mesh, geometry)[:, None])
        elif name == "hks":
            if basis is None:
                raise MissingCache("HKS requested but no spectral basis is available")
            blocks.append(hks(basis, NODE_FEATURE_DIMS["hks"], normalize=True))
        elif name == "dental_cyl":
            blocks.append(dental_frame_cylindrical(mesh.vertices))
        elif name in ("canonical_cyl", "canonical_cart"):
            if liver is None:
                liver = liver_frame(mesh, geometry)[0]
            blocks.append(cart2cyl(liver) if name == "canonical_cyl" else liver)
        elif name == "fps_anchor_distances":
            blocks.append(fps_anchor_distances(mesh.vertices))
        else:
            raise KeyError(f"unknown node feature {name!r}")
    node = np.concatenate(blocks, axis=1)
    if node.shape[1] != config.node_dim:
        raise DimensionMismatch(f"node features have {node.shape[1]} columns, expected {config.node_dim}")
    expected = EXPECTED_NODE_DIM.get(config.dataset_tag)
    if expected is not None and node.shape[1] != expected:
        raise DimensionMismatch(f"{config.dataset_tag} expects node dim {expected}, got {node.shape[1]}")
    edge = edge_scalars(mesh, geometry, adjacency, copy_weights, columns=config.edge_feature_list)

    channels = [mesh.vertices, geometry.vertex_normals][: config.coord_channels]
    if config.coord_channels > 2:
        raise DimensionMismatch("only position and normal coordinate channels are available")
    coord = np.stack(channels, axis=-1)
    if not (np.isfinite(node).all() and np.isfinite(edge).all() and np.isfinite(coord).all()):
        raise ValueError("non-finite feature values")
    return FeatureSet(
        node_scalars=node,
        edge_scalars=edge,
        coord_state=coord,
        directed_edges=adjacency.directed_edges,
        faces=mesh.faces,
        meta={"dataset_tag": config.dataset_tag},
    )
