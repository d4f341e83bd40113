"""Dense reverse-mode automatic differentiation on numpy arrays.

Each op produces a :class:`Tensor` holding its parents and a vector-Jacobian
product. :meth:`Tensor.backward` orders the recorded graph topologically (the
tape) and visits every record once in reverse.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ..errors import IndexOutOfRange, ShapeMismatch

DEFAULT_DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(dtype or DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._vjp = None
        self.name = name

    # -- construction helpers ---------------------------------------------
    @classmethod
    def _make(cls, data, parents, vjp) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        live = any(p.requires_grad for p in parents)
        out.requires_grad = live
        out._parents = tuple(parents) if live else ()
        out._vjp = vjp if live else None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- backward -----------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate gradients into ``.grad`` of every leaf that requires them."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        tape = build_tape(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def build_tape(output: Tensor) -> list:
    """Topological order of the graph feeding ``output`` (parents first)."""
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Operands as tensors; a bare scalar or array adopts the other operand's dtype."""
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def make_op(data, parents, vjp) -> Tensor:
    """Public hook to define an op from a forward value and a VJP returning one grad per parent."""
    return Tensor._make(np.asarray(data), [as_tensor(p) for p in parents], vjp)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return Tensor._make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(g, sb) if rb else None),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return Tensor._make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(-g, sb) if rb else None),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    return Tensor._make(
        ad * bd,
        (a, b),
        lambda g: (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd
    return Tensor._make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        ),
    )


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor._make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor._make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)



def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# -- linear algebra and shape ---------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2] or ad.shape[:-2] != bd.shape[:-2] and bd.ndim != 2:
        raise ShapeMismatch(f"matmul shapes {ad.shape} @ {bd.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        if not b.requires_grad:
            gb = None
        elif bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), vjp)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return Tensor._make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._make(out, ts, vjp)


def getitem(a, index) -> Tensor:
    """Slicing / indexing; repeated advanced indices accumulate in the backward pass."""
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def vjp(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._make(a.data[index], (a,), vjp)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def sqnorm(a) -> Tensor:
    """Squared Euclidean norm over the last axis (keeps a trailing singleton)."""
    a = as_tensor(a)
    ad = a.data
    return Tensor._make((ad * ad).sum(axis=-1, keepdims=True), (a,), lambda g: (2.0 * g * ad,))


def norm(a, eps: float = 0.0) -> Tensor:
    """``sqrt(||a||^2 + eps)`` over the last axis."""
    return sqrt(sqnorm(a) + eps) if eps else sqrt(sqnorm(a))


def cross(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ShapeMismatch("cross product needs a trailing axis of length 3")
    ad, bd = a.data, b.data

    def vjp(g):
        # d(a x b) . g  ->  a: b x g, b: g x a
        return _unbroadcast(np.cross(bd, g), ad.shape), _unbroadcast(np.cross(g, ad), bd.shape)

    return Tensor._make(np.cross(ad, bd), (a, b), vjp)


def where(mask, a, b) -> Tensor:
    a, b = _pair(a, b)
    mask = np.asarray(mask, dtype=bool)
    return Tensor._make(
        np.where(mask, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape), _unbroadcast(np.where(mask, 0.0, g), b.shape)),
    )


# -- segment primitives ---------------------------------------------------------


def segment_matrix(segment_ids, n_segments: int) -> sp.csr_matrix:
    """Sparse ``n_segments x len(ids)`` indicator; CSR rows sum sources in index order."""
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
        raise IndexOutOfRange(f"segment id outside [0, {n_segments})")
    m = len(ids)
    order = np.argsort(ids, kind="stable")
    indptr = np.concatenate([[0], np.cumsum(np.bincount(ids, minlength=n_segments))])
    return sp.csr_matrix((np.ones(m), order, indptr), shape=(n_segments, m))


def _seg_apply(S: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    if S.dtype != x.dtype:
        S = S.astype(x.dtype)
    flat = x.reshape(x.shape[0], -1)
    out = S @ flat
    return np.asarray(out, dtype=x.dtype).reshape((S.shape[0],) + x.shape[1:])


def segment_sum(values, segment_ids, n_segments: int, matrix: sp.csr_matrix | None = None) -> Tensor:
    """Scatter-add rows of ``values`` into ``n_segments`` buckets (sorted, deterministic order)."""
    values = as_tensor(values)
    S = matrix if matrix is not None else segment_matrix(segment_ids, n_segments)
    if S.shape[1] != values.shape[0]:
        raise ShapeMismatch("segment ids and values disagree in length")
    return Tensor._make(_seg_apply(S, values.data), (values,), lambda g: (_seg_apply(S.T, g),))


def segment_mean(values, segment_ids, n_segments: int) -> Tensor:
    """Segment average; empty segments give 0."""
    ids = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(ids, minlength=n_segments).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    values = as_tensor(values)
    inv = inv.reshape((n_segments,) + (1,) * (values.ndim - 1)).astype(values.dtype)
    return segment_sum(values, ids, n_segments) * inv


def gather(values, index, matrix: sp.csr_matrix | None = None) -> Tensor:
    """Rows ``values[index]``; the backward pass is a deterministic segment-sum.

    ``matrix`` may carry a precomputed ``segment_matrix(index, len(values))``.
    """
    values = as_tensor(values)
    idx = np.asarray(index, dtype=np.int64)
    n = values.shape[0]
    if matrix is None and idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexOutOfRange(f"gather index outside [0, {n})")

    def vjp(g):
        S = matrix if matrix is not None else segment_matrix(idx.ravel(), n)
        return (_seg_apply(S, g.reshape((-1,) + g.shape[idx.ndim :])),)

    return Tensor._make(values.data[idx], (values,), vjp)
