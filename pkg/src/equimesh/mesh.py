"""Triangle-mesh container, cleanup, normalisation, adjacency and rigid motions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyMesh, MissingAnnotation, NotOrthogonal, ZeroNormal

DEFAULT_AREA_EPS = 1e-10
NORMALIZE_EPS = 1e-12


class NonManifoldEdgeWarning(UserWarning):
    """An edge is shared by more than two faces."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh.

    ``edges``/``edge_labels`` hold an optional externally supplied undirected edge
    list with per-edge supervision; they are carried through cleanup but are not
    used to derive connectivity.
    """

    vertices: np.ndarray
    faces: np.ndarray
    vertex_labels: np.ndarray | None = None
    face_labels: np.ndarray | None = None
    edges: np.ndarray | None = None
    edge_labels: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise IndexError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        for name in ("vertex_labels", "face_labels", "edge_labels"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=np.int64).copy())
        if self.edges is not None:
            object.__setattr__(self, "edges", np.asarray(self.edges, dtype=np.int64).reshape(-1, 2).copy())
        for arr in (self.vertices, self.faces):
            arr.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return replace(self, vertices=vertices)


@dataclass(frozen=True, eq=False)
class AdjacencyIndex:
    """Connectivity derived from the face list.

    ``directed_edges`` is sorted by (source, target). ``edge_index`` maps each
    directed edge to its row in ``undirected_edges``; ``edge_face_pairs`` holds up
    to two face ids per undirected edge, ``-1`` where absent.
    """

    one_ring: list
    incident_faces: list
    directed_edges: np.ndarray
    undirected_edges: np.ndarray
    edge_index: np.ndarray
    edge_face_pairs: np.ndarray
    vertex_degree: np.ndarray
    n_nonmanifold: int = 0

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.edge_face_pairs[:, 1] < 0

    @property
    def n_boundary_edges(self) -> int:
        return int(self.boundary_mask.sum())


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    face_normals: np.ndarray
    face_areas: np.ndarray
    vertex_normals: np.ndarray


def bbox_diagonal(vertices: np.ndarray) -> float:
    if len(vertices) == 0:
        return 0.0
    return float(np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0)))


def _cross_faces(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    x = vertices[faces]
    return np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])


def clean_mesh(raw: Mesh, area_eps: float = DEFAULT_AREA_EPS) -> Mesh:
    """Drop non-finite vertices, degenerate faces and unreferenced vertices.

    No remeshing or welding is performed; surviving elements keep their relative
    order so labels stay aligned.
    """
    if raw.n_faces == 0:
        raise EmptyMesh("mesh has no faces")
    v, f = raw.vertices, raw.faces
    finite = np.isfinite(v).all(axis=1)
    keep = finite[f].all(axis=1)
    keep &= (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])

    diag = bbox_diagonal(v[finite])
    area = np.zeros(len(f))
    area[keep] = 0.5 * np.linalg.norm(_cross_faces(v, f[keep]), axis=1)
    keep &= area >= area_eps * diag**2
    # strictly positive area is always required, even with area_eps == 0
    keep &= area > 0
    if not keep.any():
        raise EmptyMesh("no faces survived cleanup")

    faces = f[keep]
    used = np.zeros(len(v), dtype=bool)
    used[faces.ravel()] = True
    remap = np.full(len(v), -1, dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))

    vlabels = raw.vertex_labels[used] if raw.vertex_labels is not None else None
    flabels = raw.face_labels[keep] if raw.face_labels is not None else None
    edges, elabels = raw.edges, raw.edge_labels
    if edges is not None:
        ok = used[edges].all(axis=1)
        edges = remap[edges[ok]]
        if elabels is not None:
            elabels = elabels[ok]
    return Mesh(
        vertices=v[used],
        faces=remap[faces],
        vertex_labels=vlabels,
        face_labels=flabels,
        edges=edges,
        edge_labels=elabels,
        provenance=raw.provenance,
    )


def normalize_coords(mesh: Mesh) -> tuple[Mesh, np.ndarray, float]:
    """Centre on the vertex mean and divide by the max distance from it."""
    if mesh.n_vertices == 0:
        raise EmptyMesh("mesh has no vertices")
    centroid = mesh.vertices.mean(axis=0)
    centred = mesh.vertices - centroid
    scale = float(np.sqrt((centred**2).sum(axis=1)).max())
    return mesh.with_vertices(centred / (scale + NORMALIZE_EPS)), centroid, scale


def face_geometry(mesh: Mesh) -> FaceGeometry:
    normals = _cross_faces(mesh.vertices, mesh.faces)
    norms = np.linalg.norm(normals, axis=1)
    if np.any(norms == 0):
        raise ZeroNormal(f"{int((norms == 0).sum())} faces have a zero cross product")
    areas = norms / 2
    # sum of unnormalised normals == area-weighted sum of unit normals (up to 2x)
    vn = np.zeros_like(mesh.vertices)
    for c in range(3):
        np.add.at(vn, mesh.faces[:, c], normals)
    lens = np.linalg.norm(vn, axis=1, keepdims=True)
    vn = np.divide(vn, lens, out=np.zeros_like(vn), where=lens > 0)
    return FaceGeometry(face_normals=normals, face_areas=areas, vertex_normals=vn)


def build_adjacency(mesh: Mesh) -> AdjacencyIndex:
    n = mesh.n_vertices
    f = mesh.faces
    nf = len(f)
    # each face contributes (a,b), (b,c), (c,a)
    half = np.stack([f, np.roll(f, -1, axis=1)], axis=-1).reshape(-1, 2)
    face_of_half = np.repeat(np.arange(nf), 3)
    key = np.sort(half, axis=1)
    undirected, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    ne = len(undirected)

    order = np.lexsort((face_of_half, inverse))
    counts = np.bincount(inverse, minlength=ne)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pairs = np.full((ne, 2), -1, dtype=np.int64)
    sorted_faces = face_of_half[order]
    pairs[:, 0] = sorted_faces[starts]
    two = counts >= 2
    pairs[two, 1] = sorted_faces[starts[two] + 1]
    n_nonmanifold = int((counts > 2).sum())
    if n_nonmanifold:
        warnings.warn(
            f"{n_nonmanifold} edges touch more than two faces; extra incidences ignored",
            NonManifoldEdgeWarning,
            stacklevel=2,
        )

    directed = np.concatenate([undirected, undirected[:, ::-1]])
    dir_edge_index = np.concatenate([np.arange(ne), np.arange(ne)])
    perm = np.lexsort((directed[:, 1], directed[:, 0]))
    directed = directed[perm]
    dir_edge_index = dir_edge_index[perm]

    degree = np.bincount(directed[:, 0], minlength=n)
    bounds = np.concatenate([[0], np.cumsum(degree)])
    one_ring = [directed[bounds[i] : bounds[i + 1], 1] for i in range(n)]

    vf = np.stack([f.ravel(), np.repeat(np.arange(nf), 3)], axis=1)
    vf = vf[np.lexsort((vf[:, 1], vf[:, 0]))]
    fcount = np.bincount(vf[:, 0], minlength=n)
    fb = np.concatenate([[0], np.cumsum(fcount)])
    incident = [vf[fb[i] : fb[i + 1], 1] for i in range(n)]

    return AdjacencyIndex(
        one_ring=one_ring,
        incident_faces=incident,
        directed_edges=directed,
        undirected_edges=undirected,
        edge_index=dir_edge_index,
        edge_face_pairs=pairs,
        vertex_degree=degree,
        n_nonmanifold=n_nonmanifold,
    )


def convert_labels(mesh: Mesh, mode: str, aux=None) -> np.ndarray:
    """Produce one label per vertex.

    ``face_majority_to_vertex`` votes over incident faces (ties -> smallest label).
    ``nearest_point_remap`` takes ``aux=(points, labels)`` and copies the label of
    the closest annotated point (ties -> smallest point index).
    """
    if mode == "face_majority_to_vertex":
        labels = mesh.face_labels if aux is None else np.asarray(aux, dtype=np.int64)
        if labels is None:
            raise MissingAnnotation("face labels required for majority vote")
        n_cls = int(labels.max()) + 1
        votes = np.zeros((mesh.n_vertices, n_cls), dtype=np.int64)
        for c in range(3):
            np.add.at(votes, (mesh.faces[:, c], labels), 1)
        # argmax returns the first maximum, i.e. the smallest label on ties
        return votes.argmax(axis=1)
    if mode == "nearest_point_remap":
        if aux is None:
            raise MissingAnnotation("annotated points and labels required")
        points, plabels = aux
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        plabels = np.asarray(plabels, dtype=np.int64)
        if len(points) == 0 or len(points) != len(plabels):
            raise MissingAnnotation("annotated point set is empty or inconsistent")
        out = np.empty(mesh.n_vertices, dtype=np.int64)
        chunk = max(1, 2_000_000 // max(1, len(points)))
        for s in range(0, mesh.n_vertices, chunk):
            d = ((mesh.vertices[s : s + chunk, None, :] - points[None]) ** 2).sum(-1)
            out[s : s + chunk] = plabels[d.argmin(axis=1)]
        return out
    raise ValueError(f"unknown label conversion mode {mode!r}")


def rigid_transform(
    mesh: Mesh,
    rotation: np.ndarray,
    translation=(0.0, 0.0, 0.0),
    rewind_on_reflection: bool = True,
) -> Mesh:
    """Apply ``x -> R x + t``; rewind faces when ``det(R) < 0`` if requested."""
    R = np.asarray(rotation, dtype=np.float64)
    if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9, rtol=0):
        raise NotOrthogonal("rotation must be a 3x3 orthogonal matrix")
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    faces = mesh.faces
    if rewind_on_reflection and np.linalg.det(R) < 0:
        faces = faces[:, [0, 2, 1]]
    return replace(mesh, vertices=mesh.vertices @ R.T + t, faces=faces)


def rotation_z(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def reflection_x() -> np.ndarray:
    return np.diag([-1.0, 1.0, 1.0])


def euler_rotation(ax: float, ay: float, az: float) -> np.ndarray:
    """Rotation ``Rz @ Ry @ Rx`` from angles in radians."""
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed proper rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


AUG_ANGLE = 0.15 * np.pi
AUG_TRANSLATION = np.array([6.0, 8.0, 5.0])


def sample_augmentation(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Training-time rigid perturbation: per-axis angles in +-0.15 pi, box translation."""
    angles = rng.uniform(-AUG_ANGLE, AUG_ANGLE, size=3)
    t = rng.uniform(-AUG_TRANSLATION, AUG_TRANSLATION)
    return euler_rotation(*angles), t


def euler_characteristic(mesh: Mesh, adjacency: AdjacencyIndex | None = None) -> int:
    adjacency = adjacency or build_adjacency(mesh)
    return mesh.n_vertices - len(adjacency.undirected_edges) + mesh.n_faces


__all__ = [
    "Mesh",
    "AdjacencyIndex",
    "FaceGeometry",
    "NonManifoldEdgeWarning",
    "clean_mesh",
    "normalize_coords",
    "face_geometry",
    "build_adjacency",
    "convert_labels",
    "rigid_transform",
    "rotation_z",
    "reflection_x",
    "euler_rotation",
    "random_rotation",
    "sample_augmentation",
    "euler_characteristic",
    "bbox_diagonal",
]
