"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the navigation policy and its PPO loss need are
provided. Each op records its parents and a closure mapping the output
gradient to parent gradients; :func:`backward` walks the recorded graph in
reverse topological order and then releases it.
"""

from __future__ import annotations

from collections.abc import Sequence
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


class AutogradError(RuntimeError):
    pass


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """Leaf tensor that owns a gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0


def _wrap(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable :class:`Parameter`."""
    if loss._backward is None:
        raise AutogradError("backward() needs a tensor produced by a recorded forward pass")
    if loss.data.size != 1:
        raise AutogradError(f"backward() needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            if isinstance(p, Parameter):
                p.grad += g
            elif p.grad is None:
                p.grad = g
            else:
                p.grad = p.grad + g
    for node in topo:
        if not isinstance(node, Parameter):
            node.grad = None
            node._parents = ()
            node._backward = None


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2 * g * x,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b), lambda g: (g * take_a, g * ~take_a))


# --------------------------------------------------------------------------
# reductions and indexing


def sum_(a: Tensor, axis=None) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), bw)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    return _make(a.data.mean(), (a,), lambda g: (np.full(shape, g / n, dtype=a.dtype),))


def take_along(a: Tensor, idx: np.ndarray) -> Tensor:
    """``a[i, idx[i]]`` for a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def bw(g):
        out = np.zeros_like(a.data)
        out[rows, idx] = g
        return (out,)

    return _make(a.data[rows, idx], (a,), bw)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(table.data[idx], (table,), bw)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * g.ndim
        out = []
        for k in range(len(parts)):
            sl[axis] = slice(bounds[k], bounds[k + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


# --------------------------------------------------------------------------
# layers


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    x = _wrap(x, W.dtype)
    xd, Wd = x.data, W.data
    y = xd @ Wd
    if b is not None:
        y = y + b.data

        def bw(g):
            return (g @ Wd.T, xd.T @ g, g.sum(axis=0))

        return _make(y, (x, W, b), bw)
    return _make(y, (x, W), lambda g: (g @ Wd.T, xd.T @ g))


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _make(y, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_layer(xproj: Tensor, h0: np.ndarray, c0: np.ndarray, W_hh: Tensor, masks: np.ndarray):
    """Run one LSTM layer over a (T*B, 4H) pre-projected input sequence.

    Gates are ordered (input, forget, cell, output). Before step ``t`` the
    carried state is multiplied by ``masks[t]`` (0 at episode starts).
    Returns the (T*B, H) hidden sequence and the final ``(h, c)`` arrays; the
    final state is treated as a constant (no gradient flows through it).
    """
    W = W_hh.data
    H = W.shape[0]
    T, B = masks.shape
    X = xproj.data.reshape(T, B, 4 * H)
    m = masks.astype(W.dtype)[:, :, None]
    hs = np.empty((T, B, H), dtype=W.dtype)
    cache = []
    h = np.asarray(h0, dtype=W.dtype)
    c = np.asarray(c0, dtype=W.dtype)
    for t in range(T):
        hp = h * m[t]
        cp = c * m[t]
        z = X[t] + hp @ W
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * cp + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        cache.append((hp, cp, i, f, g, o, tc))

    def bw(gout):
        gH = gout.reshape(T, B, H)
        dX = np.empty((T, B, 4 * H), dtype=W.dtype)
        dW = np.zeros_like(W)
        dh_next = np.zeros((B, H), dtype=W.dtype)
        dc_next = np.zeros((B, H), dtype=W.dtype)
        for t in range(T - 1, -1, -1):
            hp, cp, i, f, g, o, tc = cache[t]
            dh = gH[t] + dh_next
            dc = dc_next + dh * o * (1 - tc * tc)
            dz = dX[t]
            dz[:, :H] = dc * g * i * (1 - i)
            dz[:, H:2 * H] = dc * cp * f * (1 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1 - o)
            dW += hp.T @ dz
            dh_next = (dz @ W.T) * m[t]
            dc_next = dc * f * m[t]
        return dX.reshape(T * B, 4 * H), dW

    out = _make(hs.reshape(T * B, H), (xproj, W_hh), bw)
    return out, (h, c)
