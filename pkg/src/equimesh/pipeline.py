"""From raw meshes to training samples: cleanup, spectra, features, labels, manifests."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigMismatch, MissingAnnotation
from .features import FeatureConfig, FeatureSet, assemble_features
from .mesh import AdjacencyIndex, Mesh, build_adjacency, clean_mesh, normalize_coords, rigid_transform
from .meshio import LABEL_LEVELS, load_labels, load_mesh, load_palette
from .spectral import cached_basis

CACHE_ENV = "EQUIMESH_CACHE"

# supervision level each dataset preset is annotated at
DATASET_LEVELS = {"intra": "vertex", "teeth3ds": "vertex", "iosseg": "face", "liver": "edge"}


def cache_root(explicit=None) -> Path | None:
    """``explicit`` if given, else the directory named by ``$EQUIMESH_CACHE`` (or ``None``)."""
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


def prepare_mesh(raw: Mesh) -> Mesh:
    """Clean and rescale into the unit ball around the vertex mean."""
    return normalize_coords(clean_mesh(raw))[0]


def edge_labels_on_adjacency(mesh: Mesh, adjacency: AdjacencyIndex, default: int = 0) -> np.ndarray:
    """Project labels given on ``mesh.edges`` onto ``adjacency.undirected_edges``.

    Mesh edges missing from the external list get ``default``.
    """
    if mesh.edges is None or mesh.edge_labels is None:
        raise MissingAnnotation("edge-level supervision needs an edge list with labels")
    und = adjacency.undirected_edges
    n = mesh.n_vertices
    key = und[:, 0] * n + und[:, 1]
    ext = np.sort(mesh.edges, axis=1)
    ext_key = ext[:, 0] * n + ext[:, 1]
    order = np.argsort(key)
    pos = np.searchsorted(key[order], ext_key)
    pos = np.minimum(pos, len(key) - 1)
    hit = key[order][pos] == ext_key
    out = np.full(len(und), default, dtype=np.int64)
    out[order[pos[hit]]] = mesh.edge_labels[hit]
    return out


def level_labels(mesh: Mesh, level: str, adjacency: AdjacencyIndex | None = None) -> np.ndarray | None:
    if level == "vertex":
        return mesh.vertex_labels
    if level == "face":
        return mesh.face_labels
    if level == "edge":
        if mesh.edge_labels is None:
            return None
        return edge_labels_on_adjacency(mesh, adjacency or build_adjacency(mesh))
    raise ValueError(f"label level must be one of {LABEL_LEVELS}")


@dataclass(eq=False)
class Sample:
    """A prepared mesh with its features and supervision at one level."""

    mesh_id: str
    mesh: Mesh
    features: FeatureSet
    labels: np.ndarray | None
    level: str
    feature_config: FeatureConfig
    meta: dict = field(default_factory=dict)

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0), rewind: bool = True) -> "Sample":
        """Re-run featurisation on the rigidly moved mesh (no re-normalisation)."""
        moved = rigid_transform(self.mesh, rotation, translation, rewind_on_reflection=rewind)
        return make_sample(moved, self.feature_config, self.level, self.mesh_id, preprocess=False, labels=self.labels)


def featurize(mesh: Mesh, config: FeatureConfig, cache_dir=None, mesh_id: str | None = None) -> FeatureSet:
    adjacency = build_adjacency(mesh)
    basis = cached_basis(mesh, cache_dir, mesh_id) if "hks" in config.node_feature_list else None
    return assemble_features(mesh, basis, config, adjacency=adjacency)


def make_sample(
    mesh: Mesh,
    config: FeatureConfig,
    level: str = "vertex",
    mesh_id: str = "mesh",
    cache_dir=None,
    preprocess: bool = True,
    labels: np.ndarray | None = None,
) -> Sample:
    prepared = prepare_mesh(mesh) if preprocess else mesh
    feats = featurize(prepared, config, cache_dir, mesh_id)
    if labels is None:
        labels = level_labels(prepared, level)
    return Sample(mesh_id, prepared, feats, labels, level, config)


# -- feature files ---------------------------------------------------------------------


def save_features(path, feats: FeatureSet) -> Path:
    path = Path(path)
    np.savez(
        path,
        node_scalars=feats.node_scalars.astype("<f8"),
        edge_scalars=feats.edge_scalars.astype("<f8"),
        coord_state=feats.coord_state.astype("<f8"),
        directed_edges=feats.directed_edges.astype("<i8"),
        faces=feats.faces.astype("<i8"),
        meta=np.asarray(json.dumps(feats.meta, sort_keys=True)),
    )
    return path


def load_features(path) -> FeatureSet:
    with np.load(path) as z:
        return FeatureSet(
            node_scalars=z["node_scalars"],
            edge_scalars=z["edge_scalars"],
            coord_state=z["coord_state"],
            directed_edges=z["directed_edges"],
            faces=z["faces"],
            meta=json.loads(str(z["meta"])),
        )


# -- manifests ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    mesh_id: str
    mesh_path: Path
    label_path: Path | None
    level: str
    fold: int | None = None
    palette_path: Path | None = None
    points_path: Path | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """JSON description of a dataset: preset tag, meshes with label files and folds, cache directory.

    Relative paths are resolved against the manifest's own directory.
    """

    dataset_tag: str
    entries: tuple
    cache_dir: Path | None = None

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        raw = json.loads(path.read_text())
        base = path.parent

        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else base / p

        tag = raw["dataset_tag"]
        entries = []
        for i, e in enumerate(raw["entries"]):
            entry = ManifestEntry(
                mesh_id=e.get("id", Path(e["mesh"]).stem),
                mesh_path=resolve(e["mesh"]),
                label_path=resolve(e.get("labels")),
                level=e.get("level", DATASET_LEVELS.get(tag, "vertex")),
                fold=e.get("fold"),
                palette_path=resolve(e.get("palette")),
                points_path=resolve(e.get("points")),
            )
            entries.append(entry)
        cache = raw.get("cache_dir")
        manifest = cls(tag, tuple(entries), resolve(cache) if cache else None)
        manifest.validate()
        return manifest

    def validate(self) -> None:
        expected = DATASET_LEVELS.get(self.dataset_tag)
        for e in self.entries:
            for p in (e.mesh_path, e.label_path, e.palette_path, e.points_path):
                if p is not None and not p.exists():
                    raise FileNotFoundError(f"manifest entry {e.mesh_id}: {p} does not exist")
            if e.level not in LABEL_LEVELS:
                raise ConfigMismatch(f"entry {e.mesh_id}: unknown label level {e.level!r}")
            if expected is not None and e.level != expected:
                raise ConfigMismatch(f"{self.dataset_tag} is annotated per {expected}, entry {e.mesh_id} says {e.level}")

    def save(self, path) -> Path:
        path = Path(path)
        payload = {
            "dataset_tag": self.dataset_tag,
            "cache_dir": str(self.cache_dir) if self.cache_dir else None,
            "entries": [
                {
                    "id": e.mesh_id,
                    "mesh": str(e.mesh_path),
                    "labels": str(e.label_path) if e.label_path else None,
                    "level": e.level,
                    "fold": e.fold,
                }
                for e in self.entries
            ],
        }
        path.write_text(json.dumps(payload, indent=2))
        return path


def load_entry_mesh(entry: ManifestEntry) -> Mesh:
    """Read the mesh file and attach its labels at the entry's level."""
    mesh = load_mesh(entry.mesh_path)
    if entry.label_path is None:
        return mesh
    palette = load_palette(entry.palette_path) if entry.palette_path else None
    if entry.level == "vertex":
        labels = load_labels(entry.label_path, "vertex", mesh.n_vertices, palette, entry.points_path, mesh)
        return replace(mesh, vertex_labels=labels)
    if entry.level == "face":
        labels = load_labels(entry.label_path, "face", mesh.n_faces, palette)
        return replace(mesh, face_labels=labels)
    # edge level: rows are "a b label"
    rows = np.loadtxt(entry.label_path, dtype=np.int64, ndmin=2)
    return replace(mesh, edges=rows[:, :2], edge_labels=rows[:, 2])


def load_manifest_samples(manifest: DatasetManifest, cache_dir=None) -> list[Sample]:
    config = FeatureConfig.preset(manifest.dataset_tag) if manifest.dataset_tag in DATASET_LEVELS else FeatureConfig()
    cache = cache_root(cache_dir) or manifest.cache_dir
    out = []
    for e in manifest.entries:
        s = make_sample(load_entry_mesh(e), config, e.level, e.mesh_id, cache)
        s.meta["fold"] = e.fold
        out.append(s)
    return out
