"""A small reverse-mode autodiff engine over numpy arrays.

Only the ops the countermeasure model needs are provided. Every op
records its parents and a closure that pushes the output gradient back
into them; ``Tensor.backward`` runs the closures in reverse topological
order.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=()):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.name = name

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None, keep_intermediate=False):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents and not keep_intermediate:
                    node.grad = None

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

    def __truediv__(self, other):
        return mul(self, 1.0 / other) if not isinstance(other, Tensor) else div(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=tuple(parents) if req else ())
    if req:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / b.data ** 2, b.shape))

    return _result(a.data / b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 1:
        out = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                a._accum(g[..., None] * b.data)
            if b.requires_grad:
                b._accum((g[..., None] * a.data).reshape(-1, b.shape[0]).sum(axis=0))

        return _result(out, (a, b), backward)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accum(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        x._accum(g.transpose(inv))

    return _result(x.data.transpose(axes), (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        x._accum(g * mask)

    return _result(x.data * mask, (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        x._accum(g * (1.0 - y * y))

    return _result(y, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)

    def backward(g):
        x._accum(g * y)

    return _result(y, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accum(g / x.data)

    return _result(np.log(x.data), (x,), backward)


def softplus(x) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = as_tensor(x)
    z = x.data
    y = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        x._accum(g * _sigmoid(z))

    return _result(y, (x,), backward)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), backward)


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        p = np.exp(y)
        x._accum(g - p * g.sum(axis=axis, keepdims=True))

    return _result(y, (x,), backward)


def l2_normalize(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    norm = np.sqrt((x.data ** 2).sum(axis=axis, keepdims=True))
    y = x.data / norm

    def backward(g):
        x._accum((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm)

    return _result(y, (x,), backward)


def grl(x, lam: float) -> Tensor:
    """Gradient reversal: identity forward, gradient times -lam backward."""
    if lam < 0:
        raise ValueError("GRL coefficient must be nonnegative")
    x = as_tensor(x)
    scale = -float(lam)

    def backward(g):
        x._accum(scale * g)

    # copy so the output never aliases the input buffer
    return _result(x.data.copy(), (x,), backward)


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-d convolution (cross-correlation) over the last axis.

    x: (B, C, T), w: (O, C, K), b: (O,). Output (B, O, T_out).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv1d input {x.shape} incompatible with kernel {w.shape}")
    bsz, c, t = x.shape
    o, _, k = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    tp = t + 2 * padding
    t_out = (tp - k) // stride + 1
    if t_out < 1:
        raise ShapeMismatch(f"sequence of length {t} too short for kernel {k}")
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, : stride * (t_out - 1) + 1 : stride]
    cols = win.transpose(0, 2, 1, 3).reshape(bsz * t_out, c * k)
    wmat = w.data.reshape(o, c * k)
    out = (cols @ wmat.T).reshape(bsz, t_out, o).transpose(0, 2, 1)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]
        parents = (x, w, b)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(bsz * t_out, o)
        if w.requires_grad:
            w._accum((g2.T @ cols).reshape(o, c, k))
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(bsz, t_out, c, k).transpose(0, 2, 1, 3)
            dxp = np.zeros((bsz, c, tp))
            stop = stride * (t_out - 1) + 1
            for j in range(k):
                dxp[:, :, j : j + stop : stride] += dcols[..., j]
            x._accum(dxp[:, :, padding : padding + t] if padding else dxp)

    return _result(np.ascontiguousarray(out), parents, backward)


def item_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-item normalisation over (channels, time) with per-channel affine.

    x: (B, C, T). Statistics never mix items of a batch.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[1] * x.shape[2]
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta._accum(g.sum(axis=(0, 2)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None]
            s1 = dxhat.sum(axis=(1, 2), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
            x._accum(inv / n * (n * dxhat - s1 - xhat * s2))

    return _result(out, (x, gamma, beta), backward)


def pick(x, index: np.ndarray) -> Tensor:
    """x[arange(B), index] for a (B, K) tensor."""
    x = as_tensor(x)
    rows = np.arange(x.shape[0])

    def backward(g):
        full = np.zeros_like(x.data)
        full[rows, index] = g
        x._accum(full)

    return _result(x.data[rows, index], (x,), backward)
