"""Reverse-mode automatic differentiation over dense numpy arrays.

Every op records its parents and a closure that maps the output gradient to
parent gradients.  ``backward`` walks the recorded graph once in reverse
topological order, accumulates gradients into leaf tensors that have
``requires_grad`` set, and then clears the graph so memory is released and a
second backward on the same graph fails loudly.

All values are float64; 32-bit storage is a concern of the checkpoint format,
not of this module.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def parameter(values, rng: np.random.Generator | None = None) -> Tensor:
    """Wrap ``values`` as a gradient-carrying leaf tensor."""
    return Tensor(values, requires_grad=True)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out._done = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bwd
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable leaf; clears the recorded graph."""
    if loss.values.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    if loss._done:
        raise RuntimeError("backward already ran on this graph; re-record the ops first")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        elif node.requires_grad:
            node.grad = np.array(g) if node.grad is None else node.grad + g

    for node in order:
        node._parents = ()
        node._backward = None
    loss._done = True


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.values + b.values

    def bwd(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)

    return _node(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.values - b.values

    def bwd(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(-g, b.values.shape)

    return _node(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = _lift(a)
    return _node(-a.values, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.values * b.values

    def bwd(g):
        return (
            _unbroadcast(g * b.values, a.values.shape),
            _unbroadcast(g * a.values, b.values.shape),
        )

    return _node(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.values / b.values

    def bwd(g):
        return (
            _unbroadcast(g / b.values, a.values.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.values.shape),
        )

    return _node(out, (a, b), bwd)


def scale(a, c: float) -> Tensor:
    """Multiply by a non-learnable scalar constant."""
    a = _lift(a)
    return _node(a.values * c, (a,), lambda g: (g * c,))


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.values)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _lift(a)
    return _node(np.log(a.values), (a,), lambda g: (g / a.values,))


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.values)
    return _node(out, (a,), lambda g: (g / (2.0 * out),))


def abs_(a) -> Tensor:
    """|x| with subgradient 0 at the origin."""
    a = _lift(a)
    return _node(np.abs(a.values), (a,), lambda g: (g * np.sign(a.values),))


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.values > 0
    return _node(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _lift(a)
    mask = a.values > 0
    out = np.where(mask, a.values, slope * a.values)
    return _node(out, (a,), lambda g: (g * np.where(mask, 1.0, slope),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.values
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), bwd)


def log_sigmoid(a) -> Tensor:
    """log(sigma(x)) computed without overflow for large |x|."""
    a = _lift(a)
    x = a.values
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))

    def bwd(g):
        s = np.where(x >= 0, np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))), 1.0 / (1.0 + np.exp(-np.abs(x))))
        return (g * s,)  # d/dx log sigma(x) = sigma(-x)

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape and linear-algebra ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product for 2D@2D, 2D@1D, and 1D@2D operands."""
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or (av.ndim == 1 and bv.ndim == 1):
        raise ValueError(f"matmul supports 2D@2D, 2D@1D, 1D@2D; got {av.shape} @ {bv.shape}")
    out = av @ bv

    def bwd(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, np.outer(av, g)

    return _node(out, (a, b), bwd)


def dot(a, b) -> Tensor:
    """Inner product of two 1D vectors, returning a 0-d scalar."""
    a, b = _lift(a), _lift(b)
    if a.values.ndim != 1 or b.values.ndim != 1:
        raise ValueError("dot expects 1D vectors")
    out = np.asarray(a.values @ b.values)
    return _node(out, (a, b), lambda g: (g * b.values, g * a.values))


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.values.ndim != 2:
        raise ValueError("transpose expects a 2D tensor")
    return _node(a.values.T, (a,), lambda g: (g.T,))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    out = np.concatenate([t.values for t in ts], axis=axis)
    sizes = [t.values.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _node(out, tuple(ts), bwd)


def split(a, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split into consecutive chunks of the given sizes along ``axis``."""
    a = _lift(a)
    if sum(sizes) != a.values.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover axis of length {a.values.shape[axis]}")
    outs = []
    start = 0
    for size in sizes:
        sl = [slice(None)] * a.values.ndim
        sl[axis] = slice(start, start + size)
        sl = tuple(sl)

        def bwd(g, sl=sl):
            full = np.zeros_like(a.values)
            full[sl] = g
            return (full,)

        outs.append(_node(a.values[sl], (a,), bwd))
        start += size
    return outs


def sum_(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    out = np.asarray(a.values.sum(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.values.shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.values.shape),)

    return _node(out, (a,), bwd)


def mean(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    count = a.values.size if axis is None else a.values.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / count)


def gather_rows(a, idx) -> Tensor:
    """Select rows (or 1D elements) by integer index; duplicates allowed."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.values[idx], (a,), bwd)


def scatter_add_rows(a, idx, num_rows: int) -> Tensor:
    """Sum rows of ``a`` into ``num_rows`` buckets given by ``idx``."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((num_rows,) + a.values.shape[1:], dtype=np.float64)
    np.add.at(out, idx, a.values)
    return _node(out, (a,), lambda g: (g[idx],))


def scale_rows(a, s) -> Tensor:
    """Multiply each row of 2D ``a`` by the matching entry of 1D ``s``."""
    a, s = _lift(a), _lift(s)
    out = a.values * s.values[:, None]

    def bwd(g):
        return g * s.values[:, None], (g * a.values).sum(axis=1)

    return _node(out, (a, s), bwd)


# ---------------------------------------------------------------------------
# neural-net ops
# ---------------------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    if a.values.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (a,), bwd)


def segment_softmax(scores, segments, num_segments: int) -> Tensor:
    """Softmax of 1D ``scores`` grouped by ``segments`` (one group per id).

    Every id in [0, num_segments) must own at least one score; an empty
    segment would make the grouped softmax undefined.
    """
    scores = _lift(scores)
    seg = np.asarray(segments, dtype=np.int64)
    if scores.values.ndim != 1 or seg.shape != scores.values.shape:
        raise ValueError("segment_softmax expects matching 1D scores and segment ids")
    counts = np.bincount(seg, minlength=num_segments)
    if len(counts) > num_segments or (num_segments and counts[:num_segments].min() == 0):
        raise ValueError("softmax over an empty segment")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, scores.values)
    e = np.exp(scores.values - seg_max[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    out = e / denom[seg]

    def bwd(g):
        inner = np.zeros(num_segments)
        np.add.at(inner, seg, g * out)
        return (out * (g - inner[seg]),)

    return _node(out, (scores,), bwd)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    x = a.values
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = xhat * gain.values + bias.values

    def bwd(g):
        dxhat = g * gain.values
        dg = _unbroadcast(g * xhat, gain.values.shape)
        db = _unbroadcast(g, bias.values.shape)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (dxhat - m1 - xhat * m2) * inv, dg, db

    return _node(out, (a, gain, bias), bwd)


def dropout(a, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    a = _lift(a)
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(a.values.shape) >= rate) / (1.0 - rate)
    return _node(a.values * mask, (a,), lambda g: (g * mask,))


def masked_mean(a, mask) -> Tensor:
    """Mean of the rows of 2D ``a`` selected by a boolean mask."""
    a = _lift(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1 or mask.shape[0] != a.values.shape[0]:
        raise ValueError("mask must be 1D with one entry per row")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_mean over an empty mask")
    out = a.values[mask].mean(axis=0)

    def bwd(g):
        full = np.zeros_like(a.values)
        full[mask] = g / count
        return (full,)

    return _node(out, (a,), bwd)


_NORM_FLOOR = 1e-12


def l2_normalize(a) -> Tensor:
    """Scale a vector, or each row of a matrix, to unit L2 norm.

    The norm is floored at 1e-12 so zero vectors map to zero instead of NaN.
    """
    a = _lift(a)
    x = a.values
    if x.ndim == 1:
        s = np.linalg.norm(x)
        n = max(s, _NORM_FLOOR)
        out = x / n

        def bwd1(g):
            if s <= _NORM_FLOOR:
                return (g / n,)
            return ((g - out * (g @ out)) / n,)

        return _node(out, (a,), bwd1)
    if x.ndim == 2:
        s = np.linalg.norm(x, axis=1, keepdims=True)
        n = np.maximum(s, _NORM_FLOOR)
        out = x / n

        def bwd2(g):
            inner = (g * out).sum(axis=1, keepdims=True)
            corr = np.where(s > _NORM_FLOOR, out * inner, 0.0)
            return ((g - corr) / n,)

        return _node(out, (a,), bwd2)
    raise ValueError("l2_normalize expects a 1D or 2D tensor")


def cosine_similarity(a, b) -> Tensor:
    """Cosine of the angle between two 1D vectors."""
    return dot(l2_normalize(a), l2_normalize(b))


def linear(x, w, b=None) -> Tensor:
    """Affine map x @ w (+ b)."""
    out = matmul(x, w)
    return out if b is None else add(out, b)
