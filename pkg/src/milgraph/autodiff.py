"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every value is a float64 matrix. Operations record their inputs and a
backward closure; :func:`backward` walks the recorded graph in reverse
topological order and accumulates gradients into leaf tensors.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "backward",
    "zero_grad",
    "matmul",
    "sparse_matmul",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "power",
    "leaky_relu",
    "softmax_rows",
    "cross_entropy_with_logits",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "transpose",
    "sum_all",
    "col_sum",
    "col_mean",
    "max_rows",
    "maximum",
    "frobenius_norm",
]


class Tensor:
    """A matrix node in the computation graph.

    Leaves created with ``requires_grad=True`` are parameters: they own a
    gradient accumulator that starts at zero and is only cleared by
    :func:`zero_grad`.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "_consumed")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.value = arr
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.grad = np.zeros_like(arr) if (requires_grad and op == "leaf") else None
        self._consumed = False

    @classmethod
    def _result(cls, value, parents, backward_fn, op):
        # Skip the copy in __init__; value is already a fresh float64 matrix.
        t = cls.__new__(cls)
        t.value = value
        t.op = op
        t.requires_grad = any(p.requires_grad for p in parents)
        t.parents = parents if t.requires_grad else ()
        t.backward_fn = backward_fn if t.requires_grad else None
        t.grad = None
        t._consumed = False
        return t

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.value.size != 1:
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self):
        return self.value

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(value):
    return Tensor(value, requires_grad=True)


def constant(value):
    return Tensor(value, requires_grad=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after 2-D numpy broadcasting."""
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True).reshape(shape)


def zero_grad(params):
    for p in params:
        p.grad = np.zeros_like(p.value)


def backward(loss):
    """Back-propagate from a 1x1 ``loss``.

    Gradients are added into the accumulators of every parameter reachable
    from ``loss``. A given tape can be traversed only once. Returns a dict
    mapping each reached parameter to its accumulator.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) root, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this tape; rebuild the forward pass")
    loss._consumed = True
    if not loss.requires_grad:
        return {}

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): [np.ones((1, 1)), False]}
    reached = {}
    for node in reversed(order):
        entry = grads.pop(id(node), None)
        if entry is None:
            continue
        g = _dense(entry[0], node.shape)
        if node.op == "leaf":
            node.grad += g
            reached[node] = node.grad
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key not in grads:
                grads[key] = [[pg] if isinstance(pg, _RowPatch) else pg, False]
                continue
            _accumulate(grads[key], pg, parent.shape)
    return reached


class _RowPatch:
    """Gradient that is zero outside rows ``start:stop``."""

    __slots__ = ("start", "stop", "g")

    def __init__(self, start, stop, g):
        self.start, self.stop, self.g = start, stop, g


def _dense(value, shape):
    if isinstance(value, list):
        full = np.zeros(shape)
        for p in value:
            full[p.start : p.stop] += p.g
        return full
    return value


def _accumulate(entry, pg, shape):
    value, owned = entry
    if isinstance(value, list) and isinstance(pg, _RowPatch):
        value.append(pg)
        return
    if isinstance(value, list):
        value, owned = _dense(value, shape), True
    elif not owned:
        # arrays coming out of backward rules may be shared between parents
        value, owned = value.copy(), True
    if isinstance(pg, _RowPatch):
        value[pg.start : pg.stop] += pg.g
    else:
        value += pg
    entry[0], entry[1] = value, owned


# ---------------------------------------------------------------- products


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return Tensor._result(av @ bv, (a, b), bw, "matmul")


def sparse_matmul(m, x):
    """``m @ x`` for a constant (possibly scipy-sparse) left operand."""
    x = _as_tensor(x)
    if m.shape[1] != x.shape[0]:
        raise ValueError(f"sparse_matmul shape mismatch: {m.shape} @ {x.shape}")
    mt = m.T.tocsr() if sp.issparse(m) else m.T
    out = m @ x.value
    return Tensor._result(np.asarray(out, dtype=np.float64), (x,), lambda g: (np.asarray(mt @ g),), "sparse_matmul")


# ------------------------------------------------------------ elementwise


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value

    def bw(g):
        return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))

    return Tensor._result(av * bv, (a, b), bw, "mul")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv

    def bw(g):
        return (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape))

    return Tensor._result(out, (a, b), bw, "div")


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return Tensor._result(a.value * c, (a,), lambda g: (g * c,), "scale")


def power(a, p):
    a = _as_tensor(a)
    av = a.value
    return Tensor._result(av**p, (a,), lambda g: (g * p * av ** (p - 1),), "power")


def leaky_relu(x, slope=0.01):
    if slope < 0:
        raise ValueError("negative slope must be >= 0")
    x = _as_tensor(x)
    # derivative at exactly 0 is the slope
    d = np.where(x.value > 0, 1.0, slope)
    return Tensor._result(x.value * d, (x,), lambda g: (g * d,), "leaky_relu")


def maximum(a, b):
    """Elementwise max of two equal-shape tensors; ties route to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"maximum shape mismatch: {a.shape} vs {b.shape}")
    pick_a = a.value >= b.value
    out = np.where(pick_a, a.value, b.value)
    return Tensor._result(out, (a, b), lambda g: (g * pick_a, g * ~pick_a), "maximum")


# -------------------------------------------------------------- softmaxes


def softmax_rows(x):
    x = _as_tensor(x)
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Tensor._result(s, (x,), bw, "softmax_rows")


def cross_entropy_with_logits(logits, label):
    """Negative log-likelihood of ``label`` under softmax of a 1xC row."""
    logits = _as_tensor(logits)
    if logits.shape[0] != 1:
        raise ValueError(f"expected a single row of logits, got {logits.shape}")
    v = logits.value
    m = v.max()
    lse = m + np.log(np.exp(v - m).sum())
    p = np.exp(v - lse)
    onehot = np.zeros_like(v)
    onehot[0, int(label)] = 1.0
    loss = np.array([[lse - v[0, int(label)]]])
    return Tensor._result(loss, (logits,), lambda g: (g[0, 0] * (p - onehot),), "cross_entropy")


# ------------------------------------------------------------- structure


def concat_rows(parts):
    parts = [_as_tensor(p) for p in parts]
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return Tensor._result(np.vstack([p.value for p in parts]), tuple(parts), bw, "concat_rows")


def concat_cols(parts):
    parts = [_as_tensor(p) for p in parts]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return Tensor._result(np.hstack([p.value for p in parts]), tuple(parts), bw, "concat_cols")


def slice_rows(x, start, stop):
    x = _as_tensor(x)
    start, stop, _ = slice(start, stop).indices(x.shape[0])
    return Tensor._result(x.value[start:stop].copy(), (x,), lambda g: (_RowPatch(start, stop, g),), "slice_rows")


def slice_cols(x, start, stop):
    x = _as_tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return Tensor._result(x.value[:, start:stop].copy(), (x,), bw, "slice_cols")


def transpose(x):
    x = _as_tensor(x)
    return Tensor._result(x.value.T, (x,), lambda g: (g.T,), "transpose")


# ------------------------------------------------------------- reductions


def sum_all(x):
    x = _as_tensor(x)
    shape = x.shape
    return Tensor._result(np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),), "sum_all")


def col_sum(x):
    x = _as_tensor(x)
    k = x.shape[0]
    return Tensor._result(x.value.sum(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g, k, axis=0),), "col_sum")


def col_mean(x):
    x = _as_tensor(x)
    k = x.shape[0]
    return Tensor._result(x.value.mean(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g / k, k, axis=0),), "col_mean")


def max_rows(x):
    """Column-wise max over rows; the gradient goes to the first argmax."""
    x = _as_tensor(x)
    idx = x.value.argmax(axis=0)
    cols = np.arange(x.shape[1])
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[idx, cols] = g[0]
        return (full,)

    return Tensor._result(x.value[idx, cols].reshape(1, -1), (x,), bw, "max_rows")


def frobenius_norm(x):
    x = _as_tensor(x)
    n = float(np.sqrt((x.value**2).sum()))
    xv = x.value

    def bw(g):
        if n == 0.0:
            return (np.zeros_like(xv),)
        return (g[0, 0] * xv / n,)

    return Tensor._result(np.array([[n]]), (x,), bw, "frobenius_norm")
