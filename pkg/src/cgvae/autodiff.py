"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation records a node on the active :class:`Tape` when
at least one input requires a gradient.  Nodes are appended in creation order,
so the tape is always topologically sorted; :func:`backward` walks it once in
reverse and hands accumulated gradients to the leaves.

Broadcasting is deliberately narrow: operands must have equal shapes, one of
them must be a scalar, or one shape must be a trailing suffix of the other.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import BroadcastError, DomainError, ShapeError

NORM_EPS = 1e-12


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.nodes = []
        self.enabled = True

    def record(self, tensor):
        self.nodes.append(tensor)

    def reset(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def active_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad():
    tape = active_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


@contextlib.contextmanager
def fresh_tape():
    """Run a block against a new, empty tape (restored afterwards)."""
    prev = getattr(_local, "tape", None)
    _local.tape = Tape()
    try:
        yield _local.tape
    finally:
        _local.tape = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "__weakref__")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def tape_node(self):
        return self if self._backward is not None else None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    tape = active_tape()
    if tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape.record(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------- broadcasting

def broadcast_shape(sa, sb):
    if sa == sb:
        return sa
    if len(sa) == 0 or int(np.prod(sa)) == 1 and len(sa) <= len(sb):
        return sb
    if len(sb) == 0 or int(np.prod(sb)) == 1 and len(sb) <= len(sa):
        return sa
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise BroadcastError(f"cannot broadcast shapes {sa} and {sb}")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.full(shape, grad.sum())
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))).reshape(shape)


# ---------------------------------------------------------------- elementwise

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def elementwise(op_kind, a, b=None):
    """Dispatch an elementwise operation by name."""
    unary = {"exp": exp, "log": log, "swish": swish, "softplus": softplus,
             "sigmoid": sigmoid, "relu": relu, "square": square}
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    if op_kind in unary:
        return unary[op_kind](a)
    if op_kind in binary:
        return binary[op_kind](a, b)
    if op_kind == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    shape = broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise DomainError("division by zero")
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _make(out, (a, b), bw, "div")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of nonpositive value")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def swish(a):
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)

    def bw(g):
        return (g * (s + x * s * (1.0 - s)),)

    return _make(x * s, (a,), bw, "swish")


def softplus(a):
    a = as_tensor(a)
    x = a.data
    return _make(np.logaddexp(0.0, x), (a,), lambda g: (g * _sigmoid(x),), "softplus")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul of {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), bw, "matmul")


# ---------------------------------------------------------------- shape ops

def tsum(a, axis=None):
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def mean(a, axis=None):
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, key):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _make(np.array(a.data[key]), (a,), bw, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


# ---------------------------------------------------------------- graph aggregation

def _check_ids(ids, bound):
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= bound):
        raise IndexError(f"index out of range [0, {bound})")
    return ids


def _scatter_sum(values, ids, num):
    # bincount over flattened (row, column) slots is much faster than np.add.at
    tail = values.shape[1:]
    width = int(np.prod(tail)) if tail else 1
    if values.size == 0:
        return np.zeros((num,) + tail)
    slots = (ids[:, None] * width + np.arange(width)).ravel()
    out = np.bincount(slots, weights=values.reshape(-1), minlength=num * width)
    return out.reshape((num,) + tail)


def segment_sum(values, segment_ids, num_segments):
    """Sum rows of ``values`` that share a segment id; empty segments give zero rows."""
    values = as_tensor(values)
    ids = _check_ids(segment_ids, num_segments)
    if values.shape[0] != ids.size:
        raise ShapeError("segment_ids length must match the leading dimension of values")
    return _make(_scatter_sum(values.data, ids, num_segments), (values,),
                 lambda g: (g[ids],), "segment_sum")


def gather_rows(values, row_indices):
    values = as_tensor(values)
    n = values.shape[0]
    idx = _check_ids(row_indices, n)
    return _make(values.data[idx], (values,), lambda g: (_scatter_sum(g, idx, n),), "gather_rows")


# ---------------------------------------------------------------- 3-vector ops

def _check3(t):
    if t.ndim == 0 or t.shape[-1] != 3:
        raise ShapeError(f"trailing dimension must be 3, got shape {t.shape}")


def cross(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check3(a)
    _check3(b)
    if a.shape != b.shape:
        raise ShapeError("cross requires equal shapes")
    ad, bd = a.data, b.data

    def bw(g):
        # d/da <g, a x b> = b x g ; d/db = g x a
        return np.cross(bd, g), np.cross(g, ad)

    return _make(np.cross(ad, bd), (a, b), bw, "cross")


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check3(a)
    _check3(b)
    if a.shape != b.shape:
        raise ShapeError("dot requires equal shapes")
    ad, bd = a.data, b.data

    def bw(g):
        g = g[..., None]
        return g * bd, g * ad

    return _make((ad * bd).sum(-1), (a, b), bw, "dot")


def norm(a):
    """Euclidean norm over the trailing axis, computed as sqrt(|a|^2 + 1e-12)."""
    a = as_tensor(a)
    _check3(a)
    ad = a.data
    out = np.sqrt((ad * ad).sum(-1) + NORM_EPS)
    return _make(out, (a,), lambda g: ((g / out)[..., None] * ad,), "norm")


def vec3_ops(kind, a, b=None):
    if kind == "cross":
        return cross(a, b)
    if kind == "dot":
        return dot(a, b)
    if kind == "norm":
        return norm(a)
    raise ValueError(f"unknown vec3 op {kind!r}")


def vscale(s, v):
    """Scale vector channels: s (..., F) times v (..., F, 3) -> (..., F, 3)."""
    s, v = as_tensor(s), as_tensor(v)
    _check3(v)
    if s.shape != v.shape[:-1]:
        raise ShapeError(f"vscale of {s.shape} and {v.shape}")
    sd, vd = s.data, v.data

    def bw(g):
        return (g * vd).sum(-1), g * sd[..., None]

    return _make(sd[..., None] * vd, (s, v), bw, "vscale")


def outer(s, e):
    """Per-row outer product: s (E, F), e (E, 3) -> (E, F, 3)."""
    s, e = as_tensor(s), as_tensor(e)
    _check3(e)
    if s.ndim != 2 or e.ndim != 2 or s.shape[0] != e.shape[0]:
        raise ShapeError(f"outer of {s.shape} and {e.shape}")
    sd, ed = s.data, e.data

    def bw(g):
        return np.einsum("efk,ek->ef", g, ed), np.einsum("efk,ef->ek", g, sd)

    return _make(sd[:, :, None] * ed[:, None, :], (s, e), bw, "outer")


def channel_mix(w, v):
    """Linear mixing of vector channels: out[n, f] = sum_g w[f, g] v[n, g]."""
    w, v = as_tensor(w), as_tensor(v)
    if v.ndim != 3 or v.shape[2] != 3 or w.ndim != 2 or w.shape[1] != v.shape[1]:
        raise ShapeError(f"channel_mix of {w.shape} and {v.shape}")
    wd, vd = w.data, v.data

    def bw(g):
        return np.einsum("nfk,ngk->fg", g, vd), np.einsum("nfk,fg->ngk", g, wd)

    return _make(np.einsum("fg,ngk->nfk", wd, vd), (w, v), bw, "channel_mix")


def softmax(a, axis=-1):
    a = as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


# ---------------------------------------------------------------- backward

def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    The active tape is consumed.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if not loss.requires_grad:
        tape.reset()
        return
    if loss._backward is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        tape.reset()
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    tape.reset()
