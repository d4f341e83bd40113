"""Encoder assembly, forward pass and checkpoint files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..autodiff import Tensor, dropout, gather, segment_mean
from ..errors import ConfigMismatch
from ..features import EXPECTED_NODE_DIM, FeatureConfig
from .batch import GraphBatch
from .decoders import EdgeDecoder, NodeDecoder
from .layers import SRA, EMNNLayer, GlobalNode, VNLayer, _centroids
from .modules import Linear, Module, _param

VARIANTS = ("base", "sra", "vn")
TASK_LEVELS = ("vertex", "face", "edge")
PARAM_BUDGET = 2_000_000
VN_OFFSET_SCALE = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    node_dim: int
    edge_dim: int = 3
    n_classes: int = 2
    hidden_dims: tuple = (128, 128, 128)
    n_layers: int = 3
    coord_channels: int = 2
    variant: str = "base"
    task_level: str = "vertex"
    K_regions: int = 32
    V_virtual: int = 16
    dropout: float = 0.1
    sra_alpha: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigMismatch(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.task_level not in TASK_LEVELS:
            raise ConfigMismatch(f"task level must be one of {TASK_LEVELS}, got {self.task_level!r}")
        if len(self.hidden_dims) != self.n_layers:
            raise ConfigMismatch(f"{self.n_layers} layers but {len(self.hidden_dims)} hidden widths")
        if self.K_regions < 1 or self.V_virtual < 1:
            raise ConfigMismatch("K_regions and V_virtual must be >= 1")
        if self.coord_channels < 1:
            raise ConfigMismatch("need at least the position channel")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["hidden_dims"] = tuple(d["hidden_dims"])
        return cls(**d)


# dataset tag -> (classes, supervision level, virtual nodes)
_DATASETS = {
    "intra": (2, "vertex", 16),
    "teeth3ds": (17, "vertex", 16),
    "iosseg": (17, "face", 16),
    "liver": (3, "edge", 8),
}


def shipped_config(tag: str, variant: str = "base") -> EncoderConfig:
    """Encoder configuration for one of the bundled dataset presets."""
    if tag not in _DATASETS:
        raise KeyError(f"no shipped config for {tag!r}")
    n_classes, level, V = _DATASETS[tag]
    fc = FeatureConfig.preset(tag)
    return EncoderConfig(
        node_dim=EXPECTED_NODE_DIM[tag],
        edge_dim=fc.edge_dim,
        n_classes=n_classes,
        variant=variant,
        task_level=level,
        V_virtual=V,
    )


def shipped_configs() -> dict[str, EncoderConfig]:
    return {f"{tag}/{v}": shipped_config(tag, v) for tag in _DATASETS for v in VARIANTS}


@dataclass
class ForwardOutput:
    """``logits`` at the configured level; ``aux`` feeds the objectives."""

    logits: Tensor
    aux: dict = field(default_factory=dict)


class Model(Module):
    def __init__(self, config: EncoderConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.seed = seed
        cfg = config
        dims = (cfg.hidden_dims[0],) + tuple(cfg.hidden_dims)
        self.embed = Linear(cfg.node_dim, dims[0], rng)
        layer_cls = VNLayer if cfg.variant == "vn" else EMNNLayer
        self.layers = [layer_cls(dims[i], dims[i + 1], cfg.edge_dim, cfg.coord_channels, rng) for i in range(cfg.n_layers)]
        self.globals_ = [GlobalNode(d, rng) for d in cfg.hidden_dims]
        self.sra = SRA(cfg.hidden_dims[self.sra_depth], cfg.K_regions, rng, cfg.sra_alpha) if cfg.variant == "sra" else None
        if cfg.variant == "vn":
            H = cfg.hidden_dims[0]
            self.vn_seed = _param(rng.standard_normal((1, H)) * 0.1)
            self.vn_offsets = _param(rng.standard_normal((cfg.V_virtual, H)) * VN_OFFSET_SCALE)
        H = cfg.hidden_dims[-1]
        if cfg.task_level == "edge":
            self.decoder = EdgeDecoder(H, cfg.edge_dim, cfg.n_classes, rng, cfg.dropout)
        else:
            self.decoder = NodeDecoder(H, cfg.n_classes, rng, cfg.dropout)
        if self.n_parameters() >= PARAM_BUDGET:
            raise ConfigMismatch(f"{self.n_parameters()} parameters exceed the {PARAM_BUDGET} budget")

    @property
    def sra_depth(self) -> int:
        """Index of the layer after which the SRA block runs (the middle one)."""
        return (self.config.n_layers - 1) // 2

    @property
    def dtype(self) -> np.dtype:
        return self.embed.weight.data.dtype

    def astype(self, dtype) -> "Model":
        """Cast every parameter in place (float32 for fast training, float64 for exact checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))[:5]
            raise ConfigMismatch(f"checkpoint parameter names differ, e.g. {missing}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ConfigMismatch(f"{k}: checkpoint shape {arr.shape} vs model {p.data.shape}")
            p.data[...] = arr

    def __call__(self, batch: GraphBatch, rng=None, train: bool = False) -> ForwardOutput:
        return model_forward(self, batch, rng=rng, train=train)


def check_batch(config: EncoderConfig, batch: GraphBatch) -> None:
    if batch.node_scalars.shape[1] != config.node_dim:
        raise ConfigMismatch(f"batch node dim {batch.node_scalars.shape[1]} vs config {config.node_dim}")
    if batch.edge_scalars.shape[1] != config.edge_dim:
        raise ConfigMismatch(f"batch edge dim {batch.edge_scalars.shape[1]} vs config {config.edge_dim}")
    if batch.coords.shape[1] != config.coord_channels:
        raise ConfigMismatch(f"batch has {batch.coords.shape[1]} coordinate channels, config {config.coord_channels}")


def model_forward(model: Model, batch: GraphBatch, rng=None, train: bool = False) -> ForwardOutput:
    """Embed, run the message-passing stack, decode at the configured level.

    In training mode ``rng`` drives dropout; evaluation is deterministic.
    """
    cfg = model.config
    check_batch(cfg, batch)
    batch = batch.with_dtype(model.dtype)
    p = cfg.dropout
    h = model.embed(Tensor(batch.node_scalars))
    X = Tensor(batch.coords)
    g = None
    A = v = u = None
    if cfg.variant == "vn":
        G, V = batch.n_graphs, cfg.V_virtual
        v = gather(model.vn_seed + model.vn_offsets, np.tile(np.arange(V), G))
        u = gather(_centroids(X, batch), np.repeat(np.arange(G), V))
    for i, layer in enumerate(model.layers):
        if v is not None:
            h, X, v, u = layer(h, X, v, u, batch)
        else:
            h, X = layer(h, X, batch)
        h, g = model.globals_[i](h, g, batch)
        if model.sra is not None and i == model.sra_depth:
            h, A = model.sra(h, X, batch)
        h = dropout(h, p, rng, train)

    aux = {"embeddings": h, "coords": X, "A": A, "v": v, "u": u}
    if cfg.task_level == "edge":
        directed = model.decoder(h, X, batch, rng, train)
        edges, index = batch.undirected
        logits = segment_mean(directed, index, len(edges))
        aux["directed_logits"] = directed
    elif cfg.task_level == "face":
        logits = model.decoder.faces(h, batch, rng, train)
    else:
        logits = model.decoder(h, rng, train)
    return ForwardOutput(logits=logits, aux=aux)


# -- checkpoints ------------------------------------------------------------------

MANIFEST = "manifest.json"
PARAMS = "params.npz"


def save_checkpoint(path, model: Model, epoch: int = 0, extra: dict | None = None, arrays: dict | None = None) -> Path:
    """Write ``manifest.json`` plus little-endian float64 parameter arrays."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    state = {k: v.astype("<f8") for k, v in model.state_dict().items()}
    for k, v in (arrays or {}).items():
        state["extra/" + k] = np.asarray(v)
    np.savez(path / PARAMS, **state)
    manifest = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "epoch": int(epoch),
        "n_parameters": model.n_parameters(),
        "extra": extra or {},
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> tuple[Model, dict, dict]:
    """Returns ``(model, manifest, extra_arrays)``."""
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    model = Model(EncoderConfig.from_dict(manifest["config"]), seed=manifest["seed"])
    with np.load(path / PARAMS) as z:
        arrays = {k: z[k] for k in z.files}
    params = {k: v for k, v in arrays.items() if not k.startswith("extra/")}
    extra = {k[len("extra/") :]: v for k, v in arrays.items() if k.startswith("extra/")}
    model.load_state_dict(params)
    return model, manifest, extra


def with_variant(config: EncoderConfig, variant: str) -> EncoderConfig:
    return replace(config, variant=variant)
