"""Deterministic synthetic fixture meshes."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh, random_rotation

KINDS = ("icosphere_cap", "tube_arch", "torus", "tetrahedron", "ellipsoid")


def icosphere(level: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere with outward (counter-clockwise) winding."""
    if level < 0:
        raise ValueError("subdivision level must be >= 0")
    p = (1 + 5**0.5) / 2
    v = [
        (-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
        (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
        (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1),
    ]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(x, dtype=np.float64) / np.linalg.norm(x) for x in v]
    faces = list(f)
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


def tetrahedron() -> Mesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f, provenance="synth:tetrahedron")


def torus(major: float = 1.0, minor: float = 0.35, n_major: int = 24, n_minor: int = 12) -> Mesh:
    u = np.arange(n_major) * 2 * np.pi / n_major
    w = np.arange(n_minor) * 2 * np.pi / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    x = (major + minor * np.cos(ww)) * np.cos(uu)
    y = (major + minor * np.cos(ww)) * np.sin(uu)
    z = minor * np.sin(ww)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    faces = _grid_faces(n_major, n_minor, wrap_major=True)
    return Mesh(verts, faces, provenance="synth:torus")


def _grid_faces(n_major: int, n_minor: int, wrap_major: bool) -> np.ndarray:
    idx = lambda i, j: (i % n_major) * n_minor + (j % n_minor)  # noqa: E731
    faces = []
    rows = n_major if wrap_major else n_major - 1
    for i in range(rows):
        for j in range(n_minor):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    return np.array(faces, dtype=np.int64)


def icosphere_cap(
    level: int = 2,
    cap_angle: float = 30.0,
    bulge: float = 0.0,
    noise: float = 0.0,
    random_axis: bool = False,
    seed: int = 0,
) -> Mesh:
    """Unit icosphere with vertices inside a polar cap labelled 1.

    ``bulge`` lifts the cap radially to ``1 + bulge`` so the labelled region is
    visible to intrinsic features; ``noise`` jitters radii; ``random_axis`` turns
    the cap axis to a seed-dependent direction.
    """
    rng = np.random.default_rng(seed)
    v, f = icosphere(level)
    axis = np.array([0.0, 0.0, 1.0])
    if random_axis:
        axis = random_rotation(rng) @ axis
    inside = v @ axis > np.cos(np.deg2rad(cap_angle))
    radius = 1.0 + bulge * inside
    if noise:
        radius = radius * (1.0 + noise * rng.uniform(-1.0, 1.0, size=len(v)))
    return Mesh(
        v * radius[:, None],
        f,
        vertex_labels=inside.astype(np.int64),
        provenance=f"synth:icosphere_cap:{level}:{cap_angle}:{seed}",
    )


def tube_arch(
    n_sectors: int = 6,
    n_along: int = 48,
    n_around: int = 10,
    arch_width: float = 1.0,
    arch_depth: float = 0.75,
    tube_radius: float = 0.12,
    span: tuple[float, float] = (-1.9, 1.55),
    crown: float = 0.8,
    noise: float = 0.0,
    seed: int = 0,
) -> Mesh:
    """C-shaped open tube imitating a dental arch.

    The centreline is ``(w sin s, d cos s, 0)`` for ``s`` in ``span``; the
    asymmetric default span keeps PCA sign tests away from ties. Vertices get
    one label per angular sector along the arch.
    """
    rng = np.random.default_rng(seed)
    s = np.linspace(span[0], span[1], n_along)
    centre = np.stack([arch_width * np.sin(s), arch_depth * np.cos(s), np.zeros_like(s)], axis=1)
    tangent = np.stack([arch_width * np.cos(s), -arch_depth * np.sin(s), np.zeros_like(s)], axis=1)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    up = np.array([0.0, 0.0, 1.0])
    side = np.cross(tangent, up)
    # egg-shaped cross-section, taller than wide: crown side up, so the vertical
    # axis has a nonzero third moment
    w = np.arange(n_around) * 2 * np.pi / n_around
    height = 1.6 * np.sin(w) + crown * (np.sin(w) ** 2 - 0.5)
    ring = np.cos(w)[None, :, None] * side[:, None, :] + height[None, :, None] * up
    verts = (centre[:, None, :] + tube_radius * ring).reshape(-1, 3)
    if noise:
        verts = verts + noise * rng.standard_normal(verts.shape)
    faces = _grid_faces(n_along, n_around, wrap_major=False)
    sector = np.minimum(((s - span[0]) / (span[1] - span[0]) * n_sectors).astype(np.int64), n_sectors - 1)
    labels = np.repeat(sector, n_around)
    return Mesh(verts, faces, vertex_labels=labels, provenance=f"synth:tube_arch:{seed}")


def ellipsoid(
    level: int = 3,
    axes: tuple[float, float, float] = (1.6, 1.0, 0.6),
    egg: float = 0.25,
    seed: int = 0,
) -> Mesh:
    """Ellipsoid with an optional egg-shaped asymmetry along its first two axes."""
    v, f = icosphere(level)
    v = v * np.asarray(axes, dtype=np.float64)
    if egg:
        v[:, 0] = v[:, 0] * (1 + egg * v[:, 0] / axes[0])
        v[:, 1] = v[:, 1] * (1 + 0.5 * egg * v[:, 1] / axes[1])
    return Mesh(v, f, provenance=f"synth:ellipsoid:{seed}")


def synth_mesh(kind: str, seed: int = 0, **params) -> Mesh:
    if kind == "icosphere_cap":
        return icosphere_cap(seed=seed, **params)
    if kind == "tube_arch":
        return tube_arch(seed=seed, **params)
    if kind == "torus":
        return torus(**params)
    if kind == "tetrahedron":
        return tetrahedron()
    if kind == "ellipsoid":
        return ellipsoid(seed=seed, **params)
    raise ValueError(f"unknown fixture kind {kind!r}; choose from {KINDS}")
