"""Dense f64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` is made active with a ``with`` block; every op whose inputs
require gradients records its output on the active tape.  Outside a tape,
ops are plain numpy evaluations and nothing is recorded.

Broadcasting is restricted to exact shape matches and scalars (python
numbers or single-element tensors).  Row-wise broadcasts that the models
need (bias add, readout tiling) are explicit named ops.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .. import kernels

__all__ = [
    "ShapeError",
    "NumericalError",
    "Tensor",
    "Tape",
    "parameter",
    "constant",
    "current_tape",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "sigmoid",
    "softplus",
    "concat",
    "mean_rows",
    "row_softmax",
    "frobenius_sq",
    "sum_all",
    "mean_all",
    "transpose",
    "linear",
    "tile_rows",
    "take_rows",
    "slice_cols",
    "bilinear",
    "message_passing_block",
    "sq_error",
    "multihead_attention",
]


class ShapeError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


_local = threading.local()


def _stack() -> list:
    st = getattr(_local, "tapes", None)
    if st is None:
        st = _local.tapes = []
    return st


def current_tape() -> Tape | None:
    st = _stack()
    return st[-1] if st else None


class no_grad:
    """Suspend recording: ops inside evaluate to constants even under an active tape."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.node_id: int | None = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def parameter(data, name: str | None = None) -> Tensor:
    """Trainable leaf; its ``grad`` is a preallocated zero array."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


class Tape:
    """Ordered record of differentiable ops.

    Nodes are appended as they are created, so list order is a valid
    topological order and reverse iteration visits each node exactly once.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        st = _stack()
        if st and st[-1] is self:
            st.pop()
        else:  # pragma: no cover - misuse
            st.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor) -> None:
        out.node_id = len(self.nodes)
        self.nodes.append(out)
        for p in out._parents:
            if p.requires_grad and p._backward is None:
                self._leaves[id(p)] = p

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())

    def backward(self, loss: Tensor) -> None:
        if not self.nodes:
            raise RuntimeError("backward called on an empty tape")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        nid = loss.node_id
        if nid is None or nid >= len(self.nodes) or self.nodes[nid] is not loss:
            raise RuntimeError("loss was not produced on this tape")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes[: nid + 1]):
            g = node.grad
            if g is None:
                continue
            grads = node._backward(g)
            for parent, pg in zip(node._parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    # leaf: owned buffer, accumulate in place
                    parent.grad += pg
                elif parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg

    def clear(self) -> None:
        """Drop recorded ops and zero the gradients of every leaf they touched."""
        for leaf in self._leaves.values():
            leaf.zero_grad()
        for node in self.nodes:
            node.grad = None
            node.node_id = None
        self.nodes = []
        self._leaves = {}


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    tape = current_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        return Tensor(data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = True
    out.node_id = None
    out.name = None
    out._parents = parents
    out._backward = backward
    tape.record(out)
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1 and t.data.ndim <= 2


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, like: Tensor) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return np.full(like.shape, g.sum())


# --- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)

    def backward(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)

    def backward(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)

    def backward(g):
        ga = _reduce_to(g * b.data, a) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a) -> Tensor:
    """log(1 + exp(x)), evaluated stably."""
    a = _as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _sigmoid(x),))


# --- structural -----------------------------------------------------------------


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    ndim = ts[0].data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat axis {axis} out of range for {ndim}-d tensors")
    ax = axis % ndim
    first = ts[0].shape
    for t in ts[1:]:
        if t.data.ndim != ndim or any(s != r for i, (s, r) in enumerate(zip(t.shape, first)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {first} and {t.shape}")
    data = np.concatenate([t.data for t in ts], axis=ax)
    cuts = []
    start = 0
    for t in ts:
        sl = [slice(None)] * ndim
        sl[ax] = slice(start, start + t.shape[ax])
        cuts.append(tuple(sl))
        start += t.shape[ax]

    def backward(g):
        return tuple(g[c] if t.requires_grad else None for c, t in zip(cuts, ts))

    return _make(data, tuple(ts), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def tile_rows(v, n: int) -> Tensor:
    """Repeat a 1×d (or d) row n times into an n×d matrix."""
    v = _as_tensor(v)
    row = v.data.reshape(1, -1)
    if v.data.ndim == 2 and v.shape[0] != 1:
        raise ShapeError(f"tile_rows needs a single row, got shape {v.shape}")
    shape = v.shape
    return _make(
        np.repeat(row, n, axis=0), (v,), lambda g: (g.sum(axis=0).reshape(shape),)
    )


def take_rows(a, index) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2 or not 0 <= start <= stop <= a.shape[1]:
        raise ShapeError(f"slice_cols [{start}:{stop}] invalid for shape {a.shape}")

    def backward(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return _make(np.ascontiguousarray(a.data[:, start:stop]), (a,), backward)


# --- reductions -------------------------------------------------------------------


def mean_rows(a) -> Tensor:
    """Column means over the row axis, kept as a 1×d matrix."""
    a = _as_tensor(a)
    n = a.shape[0]
    if n == 0:
        raise ShapeError("mean_rows of a zero-row tensor")
    return _make(
        a.data.mean(axis=0, keepdims=True),
        (a,),
        lambda g: (np.repeat(g / n, n, axis=0),),
    )


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    return _make(
        np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),)
    )


def frobenius_sq(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    return _make(np.array(np.dot(x.ravel(), x.ravel())), (a,), lambda g: (2.0 * float(g) * x,))


def row_softmax(a) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), backward)


# --- linear algebra -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def linear(x, w, b=None, activation: str | None = None) -> Tensor:
    """x·W + b with the bias row added to every row of the product.

    ``activation="relu"`` applies relu inside the same tape node.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: cannot multiply shapes {x.shape} and {w.shape}")
    if activation not in (None, "relu"):
        raise ValueError(f"linear: unknown activation {activation!r}")
    out = x.data @ w.data
    if b is None:
        parents = (x, w)
    else:
        b = _as_tensor(b)
        if b.data.size != w.shape[1]:
            raise ShapeError(f"linear: bias shape {b.shape} does not match {w.shape[1]} outputs")
        out += b.data.reshape(1, -1)
        parents = (x, w, b)
    on = None
    if activation == "relu":
        on = out > 0
        out *= on

    def backward(g):
        if on is not None:
            g = g * on
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0).reshape(b.shape)

    return _make(out, parents, backward)


def message_passing_block(x, agg, w, b, skip) -> Tensor:
    """concat(relu(concat(x, agg·x)·W + b), skip) as one tape node.

    ``agg`` is a constant n×n aggregation matrix and ``skip`` the constant
    block input re-attached as a skip connection.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    A = agg.data if isinstance(agg, Tensor) else np.asarray(agg, dtype=np.float64)
    S = skip.data if isinstance(skip, Tensor) else np.asarray(skip, dtype=np.float64)
    n, d = x.shape
    if A.shape != (n, n) or w.shape[0] != 2 * d or b.data.size != w.shape[1] or S.shape[0] != n:
        raise ShapeError(
            f"message_passing_block: x{x.shape} agg{A.shape} W{w.shape} b{b.shape} skip{S.shape} disagree"
        )
    out, cat = kernels.mp_block_forward(x.data, A, w.data, b.data, S)

    def backward(g):
        gx, gw, gb = kernels.mp_block_backward(g, A, w.data, cat, out, x.requires_grad)
        return gx, gw, gb.reshape(b.shape)

    return _make(out, (x, w, b), backward)


def sq_error(pred, target, weight=None, scale: float = 1.0) -> Tensor:
    """scale · Σ (weight ⊙ (pred − target))² with a constant weight.

    ``target`` may itself be a tensor on the tape; it then receives the
    opposite gradient.
    """
    pred, target = _as_tensor(pred), _as_tensor(target)
    if target.shape != pred.shape:
        raise ShapeError(f"sq_error: shapes {pred.shape} and {target.shape} differ")
    r = pred.data - target.data
    if weight is not None:
        W2 = np.square(weight.data if isinstance(weight, Tensor) else np.asarray(weight, dtype=np.float64))
        if W2.shape != pred.shape:
            raise ShapeError(f"sq_error: weight shape {W2.shape} != {pred.shape}")
        wr = W2 * r
    else:
        wr = r
    val = scale * float(np.dot(wr.ravel(), r.ravel()))

    def backward(g):
        gp = (2.0 * scale * float(g)) * wr
        return (gp if pred.requires_grad else None), (-gp if target.requires_grad else None)

    return _make(np.array(val), (pred, target), backward)


def bilinear(e, s) -> Tensor:
    """Pairwise scores E·S·Eᵀ."""
    e, s = _as_tensor(e), _as_tensor(s)
    if s.data.ndim != 2 or s.shape[0] != s.shape[1] or e.shape[1] != s.shape[0]:
        raise ShapeError(f"bilinear: shapes {e.shape} and {s.shape} do not agree")
    es = e.data @ s.data

    def backward(g):
        ge = g @ e.data @ s.data.T + g.T @ es if e.requires_grad else None
        gs = e.data.T @ g @ e.data if s.requires_grad else None
        return ge, gs

    return _make(es @ e.data.T, (e, s), backward)


def multihead_attention(p, h, wq, wk, wv, wo, return_weights: bool = False, label: str = "attention"):
    """Multi-head attention with queries/keys from ``p`` and values from ``h``.

    ``wq``/``wk`` are stacked per head as (heads, d_p, d_k), ``wv`` as
    (heads, d_h, d_v), and ``wo`` maps the head concatenation (heads·d_v)
    back to the output width.  With ``return_weights`` the (heads, n, n)
    attention matrices are returned as a second value.
    """
    p, h, wq, wk, wv, wo = (_as_tensor(t) for t in (p, h, wq, wk, wv, wo))
    nh, d_p, d_k = wq.shape
    n = p.shape[0]
    if p.shape[1] != d_p or wk.shape != wq.shape or h.shape[0] != n or wv.shape[:2] != (nh, h.shape[1]):
        raise ShapeError(
            f"{label}: shapes P{p.shape} H{h.shape} Wq{wq.shape} Wk{wk.shape} Wv{wv.shape} disagree"
        )
    d_v = wv.shape[2]
    if wo.shape[0] != nh * d_v:
        raise ShapeError(f"{label}: W_O rows {wo.shape[0]} != heads*d_v = {nh * d_v}")
    try:
        out, cache = kernels.mha_forward(p.data, h.data, wq.data, wk.data, wv.data, wo.data)
    except FloatingPointError:
        raise NumericalError(f"{label}: non-finite attention scores") from None

    def backward(g):
        return kernels.mha_backward(g, p.data, h.data, wq.data, wk.data, wv.data, wo.data, cache,
                                    p.requires_grad, h.requires_grad)

    out_t = _make(out, (p, h, wq, wk, wv, wo), backward)
    if return_weights:
        return out_t, kernels.attention_weights(cache)
    return out_t


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in params if t.grad is not None)))
