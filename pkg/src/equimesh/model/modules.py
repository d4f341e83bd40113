"""Parameter containers: a small Module base, linear layers and MLPs."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..autodiff import Tensor, dropout, node_norm, silu


class Module:
    """Collects :class:`Tensor` parameters from attributes, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


def _param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Linear(Module):
    """``x @ W + b`` with torch-style uniform init ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True, scale: float = 1.0):
        bound = scale / np.sqrt(fan_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self.bias = _param(rng.uniform(-bound, bound, size=fan_out)) if bias else None
        self.fan_in, self.fan_out = fan_in, fan_out

    def __call__(self, x):
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out

    def zero_(self) -> None:
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0


class SplitLinear(Module):
    """A linear map on a concatenation, stored as one weight block per input part.

    Lets node-level parts be projected before they are gathered onto edges,
    which is the same map as projecting the gathered concatenation.
    """

    def __init__(self, part_dims, fan_out: int, rng: np.random.Generator):
        fan_in = int(sum(part_dims))
        bound = 1.0 / np.sqrt(fan_in)
        self.blocks = [_param(rng.uniform(-bound, bound, size=(d, fan_out))) for d in part_dims]
        self.bias = _param(rng.uniform(-bound, bound, size=fan_out))
        self.part_dims = tuple(part_dims)

    def project(self, part: int, x):
        return x @ self.blocks[part]


class MLP(Module):
    """Linear layers with SiLU between them (none after the last)."""

    def __init__(self, dims, rng: np.random.Generator, p_drop: float = 0.0, final_scale: float = 1.0):
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, scale=final_scale if i == len(dims) - 2 else 1.0)
            for i in range(len(dims) - 1)
        ]
        self.p_drop = p_drop

    def __call__(self, x, rng=None, train: bool = False):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = silu(x)
                x = dropout(x, self.p_drop, rng, train)
        return x

    @property
    def last(self) -> Linear:
        return self.layers[-1]


class SplitMLP(Module):
    """MLP whose first layer is a :class:`SplitLinear`."""

    def __init__(self, part_dims, dims, rng: np.random.Generator, final_scale: float = 1.0, final_act: bool = False):
        self.first = SplitLinear(part_dims, dims[0], rng)
        self.rest = MLP(dims, rng, final_scale=final_scale) if len(dims) > 1 else None
        self.final_act = final_act

    def finish(self, pre):
        """``pre`` is the summed first-layer projection (bias not yet added)."""
        x = pre + self.first.bias
        if self.rest is not None:
            x = self.rest(silu(x))
        if self.final_act:
            x = silu(x)
        return x


class NodeNorm(Module):
    def __init__(self, dim: int):
        self.gamma = _param(np.ones(dim))
        self.beta = _param(np.zeros(dim))

    def __call__(self, x, graph_ids, n_graphs: int):
        return node_norm(x, graph_ids, n_graphs, self.gamma, self.beta)
