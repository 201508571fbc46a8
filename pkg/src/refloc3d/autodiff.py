"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray and, when any input of an operation requires
gradients, records the operation on an implicit tape (the creation-order
DAG). ``Tensor.backward()`` replays the tape once in reverse creation
order, which is always a valid reverse topological order.

Only the primitives needed by the localization networks are provided:
elementwise arithmetic with broadcasting, matmul, concatenation, row
gathering, reshape, relu/sigmoid/tanh, max/sum/mean reductions,
log-softmax/softmax, smooth-L1 and a GRU cell composed from the above.
Float32 is used for training, float64 for high-precision testing; the
dtype follows the input arrays.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatchError",
    "UnknownPrimitiveError",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "concat",
    "gather_rows",
    "reshape",
    "repeat_rows",
    "relu",
    "sigmoid",
    "tanh",
    "max_along",
    "sum_all",
    "sum_along",
    "mean_all",
    "log_softmax",
    "softmax",
    "pick",
    "smooth_l1",
    "cross_entropy",
    "GRUWeights",
    "gru_cell",
    "forward_primitive",
]


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for the requested primitive."""


class UnknownPrimitiveError(ValueError):
    """No primitive registered under the requested kind."""


_seq = itertools.count()

_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """Dense real array, optionally tracked for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_order")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._order = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """Read-only view of the values; never touches the tape."""
        return self.data

    def grad_array(self) -> np.ndarray:
        """Accumulated gradient, or zeros if this tensor was never reached."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``grad`` for every reachable node.

        ``self`` must be a scalar. Each recorded node is visited exactly
        once, in reverse creation order.
        """
        if self.data.size != 1:
            raise ValueError("backward requires a scalar tensor")
        nodes: list[Tensor] = []
        seen = {id(self)}
        stack = [self]
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda n: n._order, reverse=True)
        self.grad = np.ones_like(self.data)
        for node in nodes:
            if node._vjp is None:
                continue
            grads = node._vjp(node.grad)
            for p, g in zip(node._parents, grads):
                if g is None or not p.requires_grad:
                    continue
                g = np.asarray(g, dtype=p.data.dtype)
                p.grad = g if p.grad is None else p.grad + g

    # Operator sugar used throughout the networks.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], vjp) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatchError(f"add: {a.shape} vs {b.shape}") from exc
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g, a.shape) if a.requires_grad else None,
        _unbroadcast(g, b.shape) if b.requires_grad else None,
    ))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeMismatchError(f"sub: {a.shape} vs {b.shape}") from exc
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g, a.shape) if a.requires_grad else None,
        _unbroadcast(-g, b.shape) if b.requires_grad else None,
    ))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatchError(f"mul: {a.shape} vs {b.shape}") from exc
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
        _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
    ))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeMismatchError("matmul supports 1-D and 2-D operands only")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        need_a, need_b = a.requires_grad, b.requires_grad
        if a.ndim == 2 and b.ndim == 2:
            return (g @ b.data.T if need_a else None,
                    a.data.T @ g if need_b else None)
        if a.ndim == 1 and b.ndim == 2:
            return (b.data @ g if need_a else None,
                    np.outer(a.data, g) if need_b else None)
        if a.ndim == 2 and b.ndim == 1:
            return (np.outer(g, b.data) if need_a else None,
                    a.data.T @ g if need_b else None)
        return (g * b.data if need_a else None,
                g * a.data if need_b else None)  # 1-D dot

    return _make(data, (a, b), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatchError(f"concat: {[t.shape for t in tensors]}") from exc
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tensors, vjp)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows along axis 0; ``idx`` is an integer array of any shape."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeMismatchError("gather_rows requires integer indices")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("gather_rows: index out of range")
    data = a.data[idx]

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _make(data, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (g.reshape(a.shape),))


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Tile a vector (or single row) into n identical rows."""
    row = a.data.reshape(1, -1)
    data = np.repeat(row, n, axis=0)
    return _make(data, (a,), lambda g: (g.sum(axis=0).reshape(a.shape),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    # Stable in both tails.
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def max_along(a: Tensor, axis: int) -> Tensor:
    """Max over one axis; gradient routes to the first argmax on ties."""
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    data = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def vjp(g):
        z = np.zeros_like(a.data)
        np.put_along_axis(z, idx, np.expand_dims(g, axis), axis=axis)
        return (z,)

    return _make(data, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.full(a.shape, g, dtype=a.dtype),))


def sum_along(a: Tensor, axis: int) -> Tensor:
    def vjp(g):
        return (np.repeat(np.expand_dims(g, axis), a.shape[axis], axis=axis),)

    return _make(a.data.sum(axis=axis), (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.full(a.shape, g / n, dtype=a.dtype),),
    )


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    ls = shifted - lse
    s = np.exp(ls)

    def vjp(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _make(ls, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(a.data).any():
        raise ValueError("softmax: NaN in input")
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (a,), vjp)


def pick(a: Tensor, rows, cols) -> Tensor:
    """Select one entry per (row, col) pair from a 2-D tensor."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if a.ndim != 2:
        raise ShapeMismatchError("pick requires a 2-D tensor")
    data = a.data[rows, cols]

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, (rows, cols), g)
        return (z,)

    return _make(data, (a,), vjp)


def smooth_l1(a: Tensor) -> Tensor:
    """Elementwise Huber penalty with unit transition point."""
    x = a.data
    ax = np.abs(x)
    data = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)

    def vjp(g):
        return (g * np.clip(x, -1.0, 1.0),)

    return _make(data, (a,), vjp)


def cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """Negative log-probability of ``target_index`` under 1-D logits."""
    if logits.ndim != 1:
        raise ShapeMismatchError("cross_entropy expects 1-D logits")
    k = logits.shape[0]
    if not 0 <= target_index < k:
        raise ValueError(f"cross_entropy: target {target_index} out of range for {k} classes")
    ls = log_softmax(logits, axis=-1)
    return neg(sum_all(gather_rows(ls, np.array([target_index]))))


class GRUWeights:
    """Gate weights for one GRU cell: three (D+H, H) matrices plus biases."""

    def __init__(self, w_update: Tensor, b_update: Tensor, w_reset: Tensor, b_reset: Tensor,
                 w_cand: Tensor, b_cand: Tensor):
        self.w_update = w_update
        self.b_update = b_update
        self.w_reset = w_reset
        self.b_reset = b_reset
        self.w_cand = w_cand
        self.b_cand = b_cand
        self.hidden = w_update.shape[1]

    def tensors(self):
        return [self.w_update, self.b_update, self.w_reset, self.b_reset, self.w_cand, self.b_cand]


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gru_cell(x: Tensor, h_prev: Tensor, weights: GRUWeights) -> Tensor:
    """One gated-recurrence step: h = (1-z) * h_prev + z * cand.

    Recorded as a single fused tape node; the update/reset/candidate gate
    equations and their hand-derived adjoints live here.
    """
    if x.ndim != 1 or h_prev.ndim != 1:
        raise ShapeMismatchError("gru_cell expects 1-D input and state")
    d = x.shape[0]
    expected = d + h_prev.shape[0]
    if weights.w_update.shape[0] != expected:
        raise ShapeMismatchError(
            f"gru_cell: weight rows {weights.w_update.shape[0]} != input+hidden {expected}")
    w = weights
    xd, hd = x.data, h_prev.data
    xh = np.concatenate([xd, hd])
    z = _stable_sigmoid(xh @ w.w_update.data + w.b_update.data)
    r = _stable_sigmoid(xh @ w.w_reset.data + w.b_reset.data)
    xrh = np.concatenate([xd, r * hd])
    cand = np.tanh(xrh @ w.w_cand.data + w.b_cand.data)
    out = (1.0 - z) * hd + z * cand

    def vjp(g):
        dz = g * (cand - hd) * z * (1.0 - z)
        dc = g * z * (1.0 - cand * cand)
        dxrh = dc @ w.w_cand.data.T
        drh = dxrh[d:]
        dr = drh * hd
        dv = dr * r * (1.0 - r)
        dxh = dz @ w.w_update.data.T + dv @ w.w_reset.data.T
        dx = dxrh[:d] + dxh[:d] if x.requires_grad else None
        dh = (g * (1.0 - z) + drh * r + dxh[d:]) if h_prev.requires_grad else None
        return (
            dx,
            dh,
            np.outer(xh, dz) if w.w_update.requires_grad else None,
            dz if w.b_update.requires_grad else None,
            np.outer(xh, dv) if w.w_reset.requires_grad else None,
            dv if w.b_reset.requires_grad else None,
            np.outer(xrh, dc) if w.w_cand.requires_grad else None,
            dc if w.b_cand.requires_grad else None,
        )

    parents = (x, h_prev, w.w_update, w.b_update, w.w_reset, w.b_reset, w.w_cand, w.b_cand)
    return _make(out, parents, vjp)


_PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "concat_last_axis": lambda *ts: concat(ts, axis=-1),
    "gather_rows": gather_rows,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "max_over_set": lambda t: max_along(t, axis=0),
    "mean": mean_all,
    "bias_add": add,
}


def forward_primitive(kind: str, *inputs) -> Tensor:
    """Dispatch one recorded primitive by name."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise UnknownPrimitiveError(f"unknown primitive kind: {kind!r}") from None
    return fn(*inputs)
