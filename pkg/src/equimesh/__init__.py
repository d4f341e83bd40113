"""Equivariant segmentation of anatomical triangle meshes."""

from .errors import EquimeshError
from .features import FeatureConfig, FeatureSet, assemble_features
from .mesh import Mesh, build_adjacency, clean_mesh, normalize_coords, rigid_transform
from .meshio import load_labels, load_mesh, save_labels, save_mesh
from .model import EncoderConfig, Model, make_batch, shipped_config
from .pipeline import Sample, make_sample
from .synth import synth_mesh

__version__ = "0.1.0"

__all__ = [
    "EquimeshError", "FeatureConfig", "FeatureSet", "assemble_features", "Mesh", "build_adjacency",
    "clean_mesh", "normalize_coords", "rigid_transform", "load_labels", "load_mesh", "save_labels",
    "save_mesh", "EncoderConfig", "Model", "make_batch", "shipped_config", "Sample", "make_sample",
    "synth_mesh",
]
