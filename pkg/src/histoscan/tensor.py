"""Dense float tensors with reverse-mode automatic differentiation.

Every primitive application whose inputs require gradients is recorded as
a node on an implicit tape: the output tensor keeps references to its
parent tensors plus a closure that propagates the output gradient to
them.  ``Tensor.backward`` walks the recorded graph once, in reverse
topological order, accumulating gradients across fan-out.

Compute is float32 by default.  Gradient-oracle work (finite-difference
checks) runs under ``oracle_mode``, which switches newly created tensors
to float64 so central differences are trustworthy.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype given to newly created tensors."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def oracle_mode():
    """64-bit mode for finite-difference oracles and exactness tests."""
    return use_dtype(np.float64)


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable tape recording; forwards run without building a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A numpy-backed array plus the bookkeeping for reverse-mode AD."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward",
                 "_backward_ran", "is_bias")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        if arr.dtype not in (np.float32, np.float64):
            raise TypeError(f"Tensor: unsupported dtype {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._backward_ran = False
        self.is_bias = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._item_err()

    def _item_err(self):
        raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- graph construction ---------------------------------------------------

    def _set_parents(self, parents: Sequence["Tensor"], backward) -> None:
        self._parents = tuple(parents)
        self._backward = backward

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Raises if the tensor is not scalar, was never recorded on the tape,
        or if backward already ran through this node.
        """
        if self.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward: tensor is not attached to a recorded tape")
        if self._backward_ran:
            raise RuntimeError("backward: tape already consumed; re-entry is an error")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue  # leaf: persists across steps, never consumed
            if node._backward_ran:
                raise RuntimeError("backward: graph node already consumed by a previous sweep")
            if node.grad is not None:
                node._backward(node.grad)
            node._backward_ran = True

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype if dtype is not None else _DEFAULT_DTYPE)


def _same_dtype(op: str, *ts: Tensor) -> None:
    d0 = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != d0:
            raise TypeError(f"{op}: mixed dtypes {d0} vs {t.data.dtype}")


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out._backward_ran = False
    out.is_bias = False
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._set_parents([p for p in parents], backward)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient contribution into a parent tensor."""
    if t.requires_grad:
        if t.grad is None:
            t.grad = g.astype(t.data.dtype, copy=True) if g.dtype != t.data.dtype else g.copy()
        else:
            t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    # right-aligned numpy rules; anything else must be an explicit reshape
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"{op}: shapes {sa} and {sb} do not broadcast")


# -- elementwise primitives ----------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    _same_dtype("add", a, b)
    _check_broadcast("add", a.shape, b.shape)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make("add", out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    _same_dtype("mul", a, b)
    _check_broadcast("mul", a.shape, b.shape)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make("mul", out_data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accum(a, -g)

    return _make("neg", -a.data, (a,), backward)


def scale(a, s: float) -> Tensor:
    """Multiply by a python scalar (kept out of the graph)."""
    a = _as_tensor(a)
    s = a.data.dtype.type(s)

    def backward(g):
        _accum(a, g * s)

    return _make("scale", a.data * s, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _make("exp", out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make("log", out_data, (a,), backward)


# -- shape primitives ------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make("reshape", out_data, (a,), backward)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        _accum(a, np.ascontiguousarray(g.transpose(inv)))

    return _make("transpose", out_data, (a,), backward)


def reverse(a, axis: int) -> Tensor:
    """Flip along one axis; the gradient flips back."""
    a = _as_tensor(a)
    out_data = np.ascontiguousarray(np.flip(a.data, axis=axis))

    def backward(g):
        _accum(a, np.ascontiguousarray(np.flip(g, axis=axis)))

    return _make("reverse", out_data, (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if len(ts) < 2:
        raise ValueError("concat: need at least two tensors")
    _same_dtype("concat", *ts)
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, np.ascontiguousarray(g[tuple(idx)]))

    return _make("concat", out_data, ts, backward)


def split(a, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split along an axis into chunks of the given sizes."""
    a = _as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise ValueError(f"split: sizes {tuple(sizes)} do not sum to dim {a.shape[axis]}")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(int(lo), int(hi))
        idx = tuple(idx)
        piece = np.ascontiguousarray(a.data[idx])

        def backward(g, idx=idx):
            if a.requires_grad:
                ga = a._ensure_grad()
                ga[idx] += g

        outs.append(_make("split", piece, (a,), backward))
    return outs


def take_rows(a, order) -> Tensor:
    """Reorder/select along the first axis; gradients scatter-add back."""
    a = _as_tensor(a)
    order = np.asarray(order, dtype=np.int64)

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, order, g)
            _accum(a, ga)

    return _make("take_rows", np.ascontiguousarray(a.data[order]), (a,), backward)


def _reduce_backward(a: Tensor, g: np.ndarray, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, a.shape).copy()
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % a.ndim for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, a.shape).copy()


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        _accum(a, _reduce_backward(a, g, axis, keepdims))

    return _make("sum", np.asarray(out_data), (a,), backward)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else int(np.prod(
        [a.shape[ax % a.ndim] for ax in (axis if isinstance(axis, tuple) else (axis,))]))

    def backward(g):
        _accum(a, _reduce_backward(a, g, axis, keepdims) / count)

    return _make("mean", np.asarray(out_data), (a,), backward)
