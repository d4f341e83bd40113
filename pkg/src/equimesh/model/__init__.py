"""The equivariant encoder, its layers and decoders."""

from .batch import GraphBatch, edge_adjacency_pairs, make_batch
from .decoders import EdgeDecoder, NodeDecoder, undirected_logits
from .encoder import (
    PARAM_BUDGET,
    VARIANTS,
    EncoderConfig,
    ForwardOutput,
    Model,
    check_batch,
    load_checkpoint,
    model_forward,
    save_checkpoint,
    shipped_config,
    shipped_configs,
    with_variant,
)
from .layers import SRA, EMNNLayer, GlobalNode, TransformerMixer, VNLayer
from .modules import MLP, Linear, Module, NodeNorm, SplitLinear, SplitMLP

__all__ = [
    "GraphBatch", "make_batch", "edge_adjacency_pairs", "EdgeDecoder", "NodeDecoder", "undirected_logits",
    "PARAM_BUDGET", "VARIANTS", "EncoderConfig", "ForwardOutput", "Model", "check_batch", "load_checkpoint",
    "model_forward", "save_checkpoint", "shipped_config", "shipped_configs", "with_variant",
    "SRA", "EMNNLayer", "GlobalNode", "TransformerMixer", "VNLayer",
    "MLP", "Linear", "Module", "NodeNorm", "SplitLinear", "SplitMLP",
]
