import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_proper_rotation, single_triangle, two_triangles, unit_icosphere
from equimesh.errors import EmptyMesh, NotOrthogonal
from equimesh.mesh import (
    Mesh,
    NonManifoldEdgeWarning,
    build_adjacency,
    clean_mesh,
    convert_labels,
    euler_characteristic,
    face_geometry,
    normalize_coords,
    reflection_x,
    rigid_transform,
    rotation_z,
)
from equimesh.synth import icosphere_cap, tetrahedron, torus


def test_repeated_index_face_dropped():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    m = Mesh(v, np.array([[0, 1, 1], [1, 3, 2]]))
    out = clean_mesh(m)
    assert out.n_faces == 1
    # vertex 0 was only used by the dropped face
    assert out.n_vertices == 3


def test_single_degenerate_face_raises():
    with pytest.raises(EmptyMesh):
        clean_mesh(Mesh(np.eye(3), np.array([[0, 1, 1]])))


def test_nan_vertex_removed_with_faces():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [np.nan, 1, 0], [2, 2, 0]])
    f = np.array([[0, 1, 2], [1, 3, 2], [2, 3, 4], [1, 4, 2]])
    out = clean_mesh(Mesh(v, f))
    assert out.n_faces == 2
    assert np.isfinite(out.vertices).all()
    assert out.n_vertices == 4


def test_clean_mesh_fixed_point(sphere):
    out = clean_mesh(sphere)
    assert np.array_equal(out.vertices, sphere.vertices)
    assert np.array_equal(out.faces, sphere.faces)


def test_clean_keeps_labels_aligned():
    m = icosphere_cap(level=1, cap_angle=40, seed=3)
    v = m.vertices.copy()
    v[5] = np.nan
    out = clean_mesh(Mesh(v, m.faces, vertex_labels=m.vertex_labels))
    keep = np.setdiff1d(np.arange(m.n_vertices), [5])
    assert np.array_equal(out.vertex_labels, m.vertex_labels[keep])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_clean_idempotent_and_invariants(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(12, 3))
    v[rng.integers(0, 12)] = np.nan
    f = rng.integers(0, 12, size=(20, 3))
    try:
        once = clean_mesh(Mesh(v, f))
    except EmptyMesh:
        return
    twice = clean_mesh(once)
    assert np.array_equal(once.vertices, twice.vertices)
    assert np.array_equal(once.faces, twice.faces)
    fo = once.faces
    assert (fo[:, 0] != fo[:, 1]).all() and (fo[:, 1] != fo[:, 2]).all() and (fo[:, 0] != fo[:, 2]).all()
    assert fo.max() < once.n_vertices
    assert np.bincount(fo.ravel(), minlength=once.n_vertices).min() > 0
    assert (face_geometry(once).face_areas > 0).all()


def test_normalize_two_points():
    m = Mesh(np.array([[0.0, 0, 0], [2, 0, 0], [1, 0, 1e-3]]), np.array([[0, 1, 2]]))
    out, c, s = normalize_coords(m)
    assert np.allclose(c, [1, 0, 1e-3 / 3])
    assert np.isclose(np.linalg.norm(out.vertices, axis=1).max(), 1.0)


def test_normalize_unit_sphere_fixed_point(sphere):
    out, c, s = normalize_coords(sphere)
    assert np.allclose(out.vertices, sphere.vertices, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_normalize_bounded(seed):
    rng = np.random.default_rng(seed)
    m = Mesh(rng.normal(size=(10, 3)) * 7 + 3, rng.integers(0, 10, size=(6, 3)))
    out, _, _ = normalize_coords(m)
    assert np.linalg.norm(out.vertices, axis=1).max() <= 1.0 + 1e-12


def test_face_geometry_right_triangle():
    g = face_geometry(single_triangle())
    assert np.allclose(g.face_normals[0], [0, 0, 1])
    assert g.face_areas[0] == 0.5
    flipped = face_geometry(Mesh(single_triangle().vertices, np.array([[0, 2, 1]])))
    assert np.allclose(flipped.face_normals[0], [0, 0, -1])


def test_area_is_half_normal_norm(sphere):
    g = face_geometry(sphere)
    assert np.array_equal(g.face_areas, np.linalg.norm(g.face_normals, axis=1) / 2)
    assert np.allclose(np.linalg.norm(g.vertex_normals, axis=1), 1, atol=1e-12)


def test_sphere_vertex_normals_radial(sphere):
    g = face_geometry(sphere)
    radial = sphere.vertices / np.linalg.norm(sphere.vertices, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip((g.vertex_normals * radial).sum(1), -1, 1)))
    assert ang.max() < 2.0


def test_adjacency_single_triangle():
    adj = build_adjacency(single_triangle())
    assert len(adj.directed_edges) == 6
    assert adj.n_boundary_edges == 3


def test_adjacency_shared_edge():
    adj = build_adjacency(two_triangles())
    shared = np.flatnonzero((adj.undirected_edges == [1, 2]).all(axis=1))[0]
    assert set(adj.edge_face_pairs[shared]) == {0, 1}
    assert adj.n_boundary_edges == 4


@pytest.mark.parametrize("mesh,chi", [(unit_icosphere(2), 2), (tetrahedron(), 2), (torus(), 0)])
def test_closed_fixtures(mesh, chi):
    adj = build_adjacency(mesh)
    assert adj.n_boundary_edges == 0
    assert euler_characteristic(mesh, adj) == chi
    d = {tuple(e) for e in adj.directed_edges}
    assert all((j, i) in d for i, j in d)


def test_nonmanifold_edge_warns():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]])
    f = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.warns(NonManifoldEdgeWarning):
        adj = build_adjacency(Mesh(v, f))
    assert adj.n_nonmanifold == 1


def test_majority_vote_and_tie():
    m = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [-1, 0, 0]]),
             np.array([[0, 1, 2], [1, 3, 2], [0, 2, 4]]))
    m = Mesh(m.vertices, m.faces, face_labels=[2, 5, 2])
    assert convert_labels(m, "face_majority_to_vertex")[2] == 2
    tie = Mesh(two_triangles().vertices, two_triangles().faces, face_labels=[3, 1])
    out = convert_labels(tie, "face_majority_to_vertex")
    assert out[1] == 1 and out[2] == 1


def test_nearest_point_identity(sphere):
    labels = np.arange(sphere.n_vertices) % 7
    out = convert_labels(sphere, "nearest_point_remap", (sphere.vertices.copy(), labels))
    assert np.array_equal(out, labels)


def test_rigid_identity(sphere):
    out = rigid_transform(sphere, np.eye(3))
    assert np.array_equal(out.vertices, sphere.vertices)
    assert np.array_equal(out.faces, sphere.faces)


def test_reflection_rewinds_normals(sphere):
    R = reflection_x()
    out = rigid_transform(sphere, R)
    assert np.allclose(face_geometry(out).face_normals, face_geometry(sphere).face_normals @ R.T)


def test_rotation_preserves_distances(sphere):
    out = rigid_transform(sphere, rotation_z(40), [1, 2, 3])
    d0 = np.linalg.norm(sphere.vertices[:, None] - sphere.vertices[None], axis=-1)
    d1 = np.linalg.norm(out.vertices[:, None] - out.vertices[None], axis=-1)
    assert np.abs(d0 - d1).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_normals_rotate_with_mesh(seed):
    rng = np.random.default_rng(seed)
    m = icosphere_cap(level=1, bulge=0.2, noise=0.05, seed=seed)
    R = random_proper_rotation(rng)
    out = rigid_transform(m, R, rng.normal(size=3))
    assert np.abs(face_geometry(out).face_normals - face_geometry(m).face_normals @ R.T).max() < 1e-9


def test_rigid_rejects_non_orthogonal(sphere):
    with pytest.raises(NotOrthogonal):
        rigid_transform(sphere, np.diag([1.0, 2.0, 1.0]))


def test_no_warning_on_clean_fixture(sphere):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_adjacency(sphere)
