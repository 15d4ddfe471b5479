"""Reverse-mode differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor`; when any input requires a
gradient the result records its parents and a closure that pushes the
upstream gradient back to them. ``backward`` walks the recorded graph in
reverse topological order. Gradients accumulate additively, so a tensor used
twice receives the sum of both contributions.
"""

from __future__ import annotations

import math

import numpy as np

DTYPE = np.float64
LAYER_NORM_EPS = 1e-5
# tanh approximation of GELU
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
# additive bias for masked attention keys; exp() underflows to exactly 0
MASK_BIAS = -1e30


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.ravel()

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self):
        backward(self)

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take_slice(self, idx)

    def sum(self):
        return total(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn):
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def matmul(a, b):
    """Matrix product; leading axes broadcast like ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # activations @ weight: one flat GEMM each way
        k, n = b.shape

        def bw(g):
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                a._accum((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accum(a.data.reshape(-1, k).T @ g2)

        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,))
        return _result(out, (a, b), bw)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), bw)


def total(x):
    x = as_tensor(x)

    def bw(g):
        x._accum(np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.data.sum()), (x,), bw)


def mean(x):
    x = as_tensor(x)
    n = x.data.size

    def bw(g):
        x._accum(np.broadcast_to(g / n, x.shape))

    return _result(np.asarray(x.data.mean()), (x,), bw)


def reshape(x, shape):
    x = as_tensor(x)

    def bw(g):
        x._accum(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), bw)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        x._accum(np.transpose(g, inv))

    return _result(np.transpose(x.data, axes), (x,), bw)


def take_slice(x, idx):
    x = as_tensor(x)

    def bw(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(full, idx, g) if _is_fancy(idx) else full.__setitem__(idx, g)
        x._accum(full)

    return _result(x.data[idx], (x,), bw)


def _is_fancy(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def embedding(table, ids):
    """Row lookup ``table[ids]`` with scatter-add gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        full = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._accum(full)

    return _result(table.data[ids], (table,), bw)


def softmax(x, axis=-1, bias=None):
    """Softmax along ``axis`` with max subtraction.

    ``bias`` is an optional constant array added to the logits first (used for
    attention masks); it never receives a gradient.
    """
    x = as_tensor(x)
    z = x.data if bias is None else x.data + bias
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), bw)


def softmax_rows(x):
    return softmax(x, axis=-1)


def layer_norm(x, gamma, beta, eps=LAYER_NORM_EPS):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        if gamma.requires_grad:
            gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accum(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gh = g * gamma.data
            x._accum(inv / d * (d * gh - gh.sum(axis=-1, keepdims=True)
                                - xhat * (gh * xhat).sum(axis=-1, keepdims=True)))

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), bw)


def gelu(x):
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = np.tanh(GELU_C * xd * (1.0 + GELU_A * x2))
    y = 0.5 * xd * (1.0 + t)

    def bw(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x2)
        x._accum(g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du))

    return _result(y, (x,), bw)


def cross_entropy(logits, label):
    """Mean negative log-likelihood of integer labels.

    ``logits`` is ``[C]`` with a scalar label, or ``[B, C]`` with ``B`` labels.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    n, c = z.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{n} rows of logits but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range for {c} classes: {labels.tolist()}")
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    loss = (lse - z[np.arange(n), labels]).mean()

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        p *= g / n
        logits._accum(p[0] if single else p)

    return _result(np.asarray(loss), (logits,), bw)


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from a scalar ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss._accum(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is None:
            continue
        if node.grad is not None:
            node._backward(node.grad)
        # intermediate gradients are not kept
        node.grad = None
