"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def _evaluate(f, inputs) -> float:
    return float(f(*inputs).data)


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` maps the input tensors to a scalar tensor. Inputs are perturbed in
    place and restored. With ``max_coords`` only that many randomly chosen
    coordinates per input are probed.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = f(*inputs)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        gflat = ga.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = _evaluate(f, inputs)
            flat[c] = orig - eps
            fm = _evaluate(f, inputs)
            flat[c] = orig
            numeric = (fp - fm) / (2 * eps)
            worst = max(worst, abs(gflat[c] - numeric) / max(1.0, abs(numeric)))
    return worst


def directional_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare ``grad . d`` with a central difference along one random direction per input."""
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    f(*inputs).backward()
    worst = 0.0
    for t in inputs:
        g = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        d = rng.standard_normal(t.shape)
        d /= np.linalg.norm(d) or 1.0
        orig = t.data.copy()
        t.data[...] = orig + eps * d
        fp = _evaluate(f, inputs)
        t.data[...] = orig - eps * d
        fm = _evaluate(f, inputs)
        t.data[...] = orig
        numeric = (fp - fm) / (2 * eps)
        worst = max(worst, abs(float((g * d).sum()) - numeric) / max(1.0, abs(numeric)))
    return worst
