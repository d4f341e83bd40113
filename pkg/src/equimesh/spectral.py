"""Cotangent Laplace-Beltrami operator, smallest eigenpairs, heat kernel signatures
and the on-disk eigenbasis cache."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CacheVersionMismatch, DegenerateSpectrum, HashMismatch, MissingCache, NoConvergence
from .mesh import Mesh, face_geometry

REGULARIZATION = 1e-9
DEFAULT_K = 64
DEFAULT_TOL = 1e-8
DENSE_THRESHOLD = 2000
# relative gap below which neighbouring eigenvalues count as one cluster; the
# truncation point is moved so it never splits such a cluster
CLUSTER_RTOL = 1e-5
CACHE_VERSION = 1
_MAGIC = b"EQSPEC"


@dataclass(frozen=True, eq=False)
class LaplaceBeltrami:
    stiffness: sp.csr_matrix
    mass: np.ndarray

    @property
    def n(self) -> int:
        return len(self.mass)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    k_requested: int
    solver_tol: float

    @property
    def k(self) -> int:
        return len(self.eigenvalues)


def assemble_lb(mesh: Mesh, regularization: float = REGULARIZATION) -> LaplaceBeltrami:
    """Cotangent stiffness ``W`` (positive semi-definite sign convention) and lumped mass."""
    geom = face_geometry(mesh)
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    double_area = 2.0 * geom.face_areas
    rows, cols, vals = [], [], []
    for c in range(3):
        i, j, k = f[:, c], f[:, (c + 1) % 3], f[:, (c + 2) % 3]
        # angle at k, opposite edge (i, j)
        a, b = v[i] - v[k], v[j] - v[k]
        cot = (a * b).sum(axis=1) / double_area
        rows += [i, j]
        cols += [j, i]
        vals += [-0.5 * cot, -0.5 * cot]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel() + regularization
    W = (off + sp.diags(diag)).tocsr()
    W.sort_indices()
    mass = np.zeros(n)
    for c in range(3):
        np.add.at(mass, f[:, c], geom.face_areas / 3.0)
    return LaplaceBeltrami(stiffness=W, mass=mass)


def _cluster_cut(evals: np.ndarray, k: int, complete: bool = False) -> int:
    """Number of pairs to keep so the cut does not split a near-degenerate cluster.

    Extends past ``k`` when the extra pairs are available, otherwise trims back.
    ``complete`` means ``evals`` is the whole spectrum, so nothing lies beyond it.
    """
    if len(evals) <= k:
        return len(evals)

    def tied(a, b):
        return b - a <= CLUSTER_RTOL * max(abs(b), 1e-12)

    kk = k
    while kk < len(evals) and tied(evals[kk - 1], evals[kk]):
        kk += 1
    if kk < len(evals) or kk == k or complete:
        return kk
    kk = k
    while kk > 2 and tied(evals[kk - 1], evals[kk]):
        kk -= 1
    return kk


def eig_smallest(
    lb: LaplaceBeltrami,
    k: int = DEFAULT_K,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    dense_threshold: int = DENSE_THRESHOLD,
) -> SpectralBasis:
    """Smallest ``k`` eigenpairs of ``W phi = lambda M phi``.

    Solved as the symmetric problem ``M^-1/2 W M^-1/2`` and mapped back, so the
    returned vectors are M-orthonormal. Meshes up to ``dense_threshold`` vertices
    use a dense solver; larger ones use shift-invert Lanczos. The cut is moved
    so that it never splits a cluster of nearly equal eigenvalues.
    """
    n = lb.n
    k = min(k, n - 1)
    if k < 1:
        raise ValueError("need at least 2 vertices for an eigenbasis")
    m_isqrt = 1.0 / np.sqrt(lb.mass)
    D = sp.diags(m_isqrt)
    S = (D @ lb.stiffness @ D).tocsr()
    want = min(k + 1, n - 1) if n > dense_threshold else min(k + 16, n)
    if n <= dense_threshold:
        dense = S.toarray()
        dense = 0.5 * (dense + dense.T)
        evals, psi = scipy.linalg.eigh(dense, subset_by_index=[0, want - 1])
    else:
        max_iter = max_iter or 50 * k
        v0 = np.ones(n) / np.sqrt(n)
        try:
            evals, psi = spla.eigsh(S, k=want, sigma=-1e-6, which="LM", tol=tol, maxiter=max_iter, v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(max_iter) from exc
        order = np.argsort(evals)
        evals, psi = evals[order], psi[:, order]
    phi = psi * m_isqrt[:, None]
    keep = _cluster_cut(evals, k, complete=len(evals) == n)
    evals, phi = evals[:keep], phi[:, :keep]
    # deterministic sign: largest-magnitude entry of each vector positive
    idx = np.abs(phi).argmax(axis=0)
    phi = phi * np.sign(phi[idx, np.arange(phi.shape[1])])
    return SpectralBasis(
        eigenvalues=np.maximum(evals, 0.0),
        eigenvectors=phi,
        k_requested=k,
        solver_tol=tol,
    )


def hks_times(eigenvalues: np.ndarray, n_times: int = 8) -> np.ndarray:
    if len(eigenvalues) < 2 or eigenvalues[1] <= 1e-12:
        raise DegenerateSpectrum("second eigenvalue is ~0; mesh is disconnected or too small")
    c = 4 * np.log(10)
    return np.geomspace(c / eigenvalues[-1], c / eigenvalues[1], n_times)


def hks(basis: SpectralBasis, n_times: int = 8, normalize: bool = True, times=None) -> np.ndarray:
    """Heat kernel signature ``sum_k exp(-lambda_k t) phi_k(i)^2``, one column per time."""
    if times is None:
        times = hks_times(basis.eigenvalues, n_times)
    decay = np.exp(-np.outer(basis.eigenvalues, np.asarray(times, dtype=np.float64)))
    out = np.square(basis.eigenvectors) @ decay
    if normalize:
        out = zscore_columns(out)
    return out


def zscore_columns(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    centred = x - mean
    # constant columns carry no relative variation
    scale = np.where(std > 1e-12 * np.maximum(np.abs(mean), 1e-300), std, np.inf)
    return centred / scale


def residuals(lb: LaplaceBeltrami, basis: SpectralBasis) -> np.ndarray:
    """Per-pair ``||W phi - lambda M phi||_inf``."""
    r = lb.stiffness @ basis.eigenvectors - lb.mass[:, None] * basis.eigenvectors * basis.eigenvalues
    return np.abs(r).max(axis=0)


# -- cache -----------------------------------------------------------------


def mesh_hash(mesh: Mesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    return h.hexdigest()


def _write_array(path: Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = _MAGIC + bytes([CACHE_VERSION, arr.ndim]) + np.asarray(arr.shape, dtype="<u8").tobytes()
    path.write_bytes(header + arr.tobytes())


def _read_array(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < len(_MAGIC) + 2 or raw[: len(_MAGIC)] != _MAGIC or raw[len(_MAGIC)] != CACHE_VERSION:
        raise CacheVersionMismatch(f"{path.name}: bad header or unsupported cache version")
    ndim = raw[len(_MAGIC) + 1]
    off = len(_MAGIC) + 2
    shape = tuple(int(s) for s in np.frombuffer(raw[off : off + 8 * ndim], dtype="<u8"))
    data = np.frombuffer(raw[off + 8 * ndim :], dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise CacheVersionMismatch(f"{path.name}: payload size does not match header")
    return data.reshape(shape).astype(np.float64)


def save_basis(cache_dir, mesh_id: str, basis: SpectralBasis, content_hash: str) -> Path:
    """Write one directory per mesh; files are staged and renamed atomically."""
    root = Path(cache_dir)
    root.mkdir(parents=True, exist_ok=True)
    target = root / mesh_id
    target.mkdir(exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{mesh_id}.", dir=root))
    try:
        _write_array(stage / "eigenvalues.bin", basis.eigenvalues)
        _write_array(stage / "eigenvectors.bin", basis.eigenvectors)
        manifest = {
            "version": CACHE_VERSION,
            "hash": content_hash,
            "k": int(basis.k_requested),
            "tol": float(basis.solver_tol),
        }
        (stage / "manifest.json").write_text(json.dumps(manifest, sort_keys=True))
        for name in ("eigenvalues.bin", "eigenvectors.bin", "manifest.json"):
            os.replace(stage / name, target / name)
    finally:
        for p in stage.glob("*"):
            p.unlink()
        stage.rmdir()
    return target


def load_basis(cache_dir, mesh_id: str, content_hash: str | None = None) -> SpectralBasis:
    target = Path(cache_dir) / mesh_id
    manifest_path = target / "manifest.json"
    if not manifest_path.exists():
        raise MissingCache(f"no cached spectrum for {mesh_id!r}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != CACHE_VERSION:
        raise CacheVersionMismatch(f"cache version {manifest.get('version')} != {CACHE_VERSION}")
    if content_hash is not None and manifest.get("hash") != content_hash:
        raise HashMismatch(f"cached spectrum for {mesh_id!r} belongs to different mesh content")
    return SpectralBasis(
        eigenvalues=_read_array(target / "eigenvalues.bin"),
        eigenvectors=_read_array(target / "eigenvectors.bin"),
        k_requested=int(manifest["k"]),
        solver_tol=float(manifest["tol"]),
    )


def spectral_cache_roundtrip(cache_dir, mesh_id: str, basis: SpectralBasis, content_hash: str) -> SpectralBasis:
    save_basis(cache_dir, mesh_id, basis, content_hash)
    return load_basis(cache_dir, mesh_id, content_hash)


def cached_basis(mesh: Mesh, cache_dir=None, mesh_id: str | None = None, k: int = DEFAULT_K, tol: float = DEFAULT_TOL):
    """Load the basis for ``mesh`` from the cache, computing and storing it on a miss."""
    content_hash = mesh_hash(mesh)
    if cache_dir is not None:
        mesh_id = mesh_id or content_hash[:16]
        try:
            return load_basis(cache_dir, mesh_id, content_hash)
        except (MissingCache, HashMismatch, CacheVersionMismatch):
            pass
    basis = eig_smallest(assemble_lb(mesh), k=k, tol=tol)
    if cache_dir is not None:
        save_basis(cache_dir, mesh_id, basis, content_hash)
    return basis
