import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_proper_rotation, unit_icosphere
from equimesh.errors import CacheVersionMismatch, HashMismatch
from equimesh.mesh import Mesh, reflection_x, rigid_transform
from equimesh.spectral import (
    assemble_lb,
    cached_basis,
    eig_smallest,
    hks,
    hks_times,
    load_basis,
    mesh_hash,
    residuals,
    save_basis,
    spectral_cache_roundtrip,
)
from equimesh.synth import icosphere_cap, tetrahedron


def dense_lb_oracle(mesh):
    """Cotangent stiffness and barycentric mass assembled entry by entry."""
    v, f = mesh.vertices, mesh.faces
    n = len(v)
    W = np.zeros((n, n))
    M = np.zeros(n)
    for tri in f:
        for c in range(3):
            i, j, k = tri[c], tri[(c + 1) % 3], tri[(c + 2) % 3]
            a, b = v[i] - v[k], v[j] - v[k]
            cot = a @ b / np.linalg.norm(np.cross(a, b))
            W[i, j] -= 0.5 * cot
            W[j, i] -= 0.5 * cot
        area = 0.5 * np.linalg.norm(np.cross(v[tri[1]] - v[tri[0]], v[tri[2]] - v[tri[0]]))
        M[tri] += area / 3
    W[np.diag_indices(n)] = -W.sum(axis=1)
    return W, M


def test_equilateral_triangle_entries():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    lb = assemble_lb(Mesh(v, [[0, 1, 2]]))
    W = lb.stiffness.toarray()
    off = W[~np.eye(3, dtype=bool)]
    assert np.allclose(off, -1 / (2 * np.sqrt(3)), atol=1e-12)
    assert np.allclose(lb.mass, (np.sqrt(3) / 4) / 3, atol=1e-15)


def test_matches_dense_assembly():
    m = icosphere_cap(level=1, bulge=0.3, noise=0.05, seed=2)
    lb = assemble_lb(m, regularization=0.0)
    W, M = dense_lb_oracle(m)
    assert np.abs(lb.stiffness.toarray() - W).max() < 1e-12
    assert np.allclose(lb.mass, M, rtol=1e-12)


def test_symmetry_and_row_sums(sphere):
    lb = assemble_lb(sphere, regularization=0.0)
    W = lb.stiffness
    assert abs(W - W.T).max() < 1e-14
    assert np.abs(W @ np.ones(sphere.n_vertices)).max() < 1e-8
    assert (lb.mass > 0).all()
    reg = assemble_lb(sphere)
    assert np.abs(reg.stiffness @ np.ones(sphere.n_vertices)).max() <= 1e-8 + 3e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lanczos_matches_dense_generalized_oracle(seed):
    # 162-vertex fixture, forced down the sparse path
    m = icosphere_cap(level=2, bulge=0.2, noise=0.05, random_axis=True, seed=seed)
    lb = assemble_lb(m)
    basis = eig_smallest(lb, k=20, tol=1e-12, dense_threshold=0)
    oracle = scipy.linalg.eigh(lb.stiffness.toarray(), np.diag(lb.mass), eigvals_only=True)[: basis.k]
    rel = np.abs(basis.eigenvalues - oracle) / np.maximum(np.abs(oracle), 1e-12)
    assert rel[1:].max() < 1e-7
    assert abs(basis.eigenvalues[0]) < 1e-6


def test_basis_properties(sphere):
    lb = assemble_lb(sphere)
    basis = eig_smallest(lb, k=16)
    gram = basis.eigenvectors.T @ (lb.mass[:, None] * basis.eigenvectors)
    assert np.abs(gram - np.eye(basis.k)).max() < 1e-6
    assert basis.eigenvalues[0] <= 1e-6
    phi0 = basis.eigenvectors[:, 0]
    assert np.ptp(phi0) < 1e-6 * np.abs(phi0).max()
    assert (residuals(lb, basis) <= 1e-8 * abs(lb.stiffness).sum(axis=1).max()).all()


def test_sphere_first_triplet_degenerate(sphere):
    ev = eig_smallest(assemble_lb(sphere), k=8).eigenvalues
    trip = ev[1:4]
    assert np.ptp(trip) < 0.05 * trip.mean()


def test_tetrahedron_signatures_equal():
    H = hks(eig_smallest(assemble_lb(tetrahedron()), k=3), normalize=False)
    assert np.abs(H - H[0]).max() < 1e-9


def test_sphere_hks_nearly_constant(sphere):
    H = hks(eig_smallest(assemble_lb(sphere), k=32), normalize=False)
    assert (H.var(axis=0) < 0.01 * H.mean(axis=0)).all()


def test_zscore_columns(sphere):
    m = icosphere_cap(level=2, bulge=0.2, noise=0.02, seed=0)
    H = hks(eig_smallest(assemble_lb(m), k=32))
    assert np.abs(H.mean(axis=0)).max() < 1e-9
    assert np.abs(H.std(axis=0) - 1).max() < 1e-9


def test_hks_times_span():
    ev = np.array([0.0, 2.0, 3.0, 10.0])
    t = hks_times(ev, 8)
    c = 4 * np.log(10)
    assert np.isclose(t[0], c / 10) and np.isclose(t[-1], c / 2)
    assert np.allclose(np.diff(np.log(t)), np.log(t[1] / t[0]))


def test_hks_decreasing_in_time():
    m = icosphere_cap(level=2, bulge=0.2, noise=0.02, seed=4)
    basis = eig_smallest(assemble_lb(m), k=32)
    # drop the constant mode so the signature is a sum of decaying terms
    H = hks(type(basis)(basis.eigenvalues[1:], basis.eigenvectors[:, 1:], basis.k_requested, basis.solver_tol),
            normalize=False, times=hks_times(basis.eigenvalues))
    assert (np.diff(H, axis=1) <= 1e-15).all()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_hks_rigid_invariance(seed, reflect):
    rng = np.random.default_rng(seed)
    m = icosphere_cap(level=2, bulge=0.2, noise=0.03, seed=seed)
    R = random_proper_rotation(rng) @ (reflection_x() if reflect else np.eye(3))
    moved = rigid_transform(m, R, rng.normal(size=3))
    tol = 1e-8
    h0 = hks(eig_smallest(assemble_lb(m), k=32, tol=tol))
    h1 = hks(eig_smallest(assemble_lb(moved), k=32, tol=tol))
    assert np.abs(h0 - h1).max() < 10 * tol


def test_cache_roundtrip_bit_identical(tmp_path, sphere):
    basis = eig_smallest(assemble_lb(sphere), k=8)
    back = spectral_cache_roundtrip(tmp_path, "s", basis, mesh_hash(sphere))
    assert np.array_equal(back.eigenvalues, basis.eigenvalues)
    assert np.array_equal(back.eigenvectors, basis.eigenvectors)
    assert back.k_requested == basis.k_requested


def test_cache_miss_on_moved_vertex(tmp_path, sphere):
    cached_basis(sphere, tmp_path, "s", k=8)
    v = sphere.vertices.copy()
    v[0, 0] += 1e-9
    moved = Mesh(v, sphere.faces)
    with pytest.raises(HashMismatch):
        load_basis(tmp_path, "s", mesh_hash(moved))
    # a miss recomputes and overwrites
    cached_basis(moved, tmp_path, "s", k=8)
    assert load_basis(tmp_path, "s", mesh_hash(moved)).k >= 1


def test_cache_corrupt_header(tmp_path, sphere):
    basis = eig_smallest(assemble_lb(sphere), k=8)
    target = save_basis(tmp_path, "s", basis, mesh_hash(sphere))
    raw = bytearray((target / "eigenvalues.bin").read_bytes())
    raw[0] ^= 0xFF
    (target / "eigenvalues.bin").write_bytes(bytes(raw))
    with pytest.raises(CacheVersionMismatch):
        load_basis(tmp_path, "s")


def test_small_icosphere_kind():
    assert unit_icosphere(1).n_vertices == 42
