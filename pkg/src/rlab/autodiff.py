"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Tensor ids grow
monotonically, so sorting reachable nodes by descending id is a valid
reverse topological order and no explicit graph object is needed.
"""
from __future__ import annotations

import contextlib
import itertools
import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_ids = itertools.count()
_grad_enabled = True

BCE_EPS = 1e-7


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "id", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self.id = next(_ids)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return shift(self, other) if _is_scalar(other) else add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return shift(self, -other) if _is_scalar(other) else sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other) if _is_scalar(other) else sub(_as_tensor(other), self)

    def __mul__(self, other):
        return scale(self, other) if _is_scalar(other) else mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if not _is_scalar(other):
            raise ContractError("only division by a scalar constant is supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _is_scalar(x):
    return isinstance(x, (int, float, np.floating, np.integer)) and not isinstance(x, bool)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    return Tensor(data, requires_grad=False)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _make(data, parents, op, backward_fn):
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.id = next(_ids)
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def backward(loss):
    """Backpropagate from a scalar ``loss``.

    Leaf tensors with ``requires_grad`` accumulate into ``.grad``.  Returns a
    map from tensor id to gradient for every reachable tensor that requires
    grad, intermediates included.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.id in nodes:
            continue
        nodes[t.id] = t
        stack.extend(p for p in t._parents if p.requires_grad and p.id not in nodes)
    grads = {loss.id: np.ones_like(loss.data)}
    for tid in sorted(nodes, reverse=True):
        t = nodes[tid]
        g = grads.get(tid)
        if g is None or t._backward is None:
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg
    for tid, t in nodes.items():
        if t._backward is None and tid in grads:
            t.grad = grads[tid] if t.grad is None else t.grad + grads[tid]
    return grads


# ---------------------------------------------------------------------------
# elementwise binary ops (equal shapes, or bias-style suffix broadcast)


def _check_binary(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if len(sb) <= len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def add(a, b):
    _check_binary("add", a, b)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    _check_binary("sub", a, b)

    def bw(g):
        return _reduce_to(g, a.shape), -_reduce_to(g, b.shape)

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    _check_binary("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_reduce_to(g * bd, a.shape) if a.requires_grad else None,
                _reduce_to(g * ad, b.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), "mul", bw)


def scale(x, c):
    c = float(c)
    return _make(x.data * c, (x,), "scale", lambda g: (g * c,))


def shift(x, c):
    c = float(c)
    return _make(x.data + c, (x,), "shift", lambda g: (g,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b):
    """``a @ b`` for 2-D operands, batched ``(..., n, k) @ (k, m)``, or
    batched with identical leading dims on both sides."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if b.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), "matmul", bw)


def transpose(x, axes=None):
    if axes is None:
        if x.data.ndim != 2:
            raise DimensionError(f"transpose: default axes need a 2-D tensor, got {x.shape}")
        axes = (1, 0)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), "transpose",
                 lambda g: (np.transpose(g, inv),))


def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    orig = x.shape
    return _make(out, (x,), "reshape", lambda g: (g.reshape(orig),))


def concat(tensors: Sequence[Tensor], axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: need at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, "concat", bw)


def stack(tensors: Sequence[Tensor], axis=0):
    """Stack equal-shaped tensors along a new axis."""
    tensors = list(tensors)
    shape = list(tensors[0].shape)
    shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, 1)
    return concat([reshape(t, shape) for t in tensors], axis=axis)


def getitem(x, index):
    out = x.data[index]
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(np.array(out, dtype=np.float64), (x,), "getitem", bw)


def _is_fancy(index):
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def embedding(weight, ids, padding_idx=None):
    """Row lookup ``weight[ids]``; gradient rows for ``padding_idx`` stay zero."""
    ids = np.asarray(ids, dtype=np.int64)
    if weight.data.ndim != 2:
        raise DimensionError(f"embedding: weight must be 2-D, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DimensionError(f"embedding: id out of range for {weight.shape[0]} rows")
    vshape = weight.shape

    def bw(g):
        gw = np.zeros(vshape)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, vshape[1]))
        if padding_idx is not None:
            gw[padding_idx] = 0.0
        return (gw,)

    return _make(weight.data[ids], (weight,), "embedding", bw)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(s, (x,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def tanh(x):
    t = np.tanh(x.data)
    return _make(t, (x,), "tanh", lambda g: (g * (1.0 - t * t),))


def relu(x):
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), "relu", lambda g: (g * pos,))


def exp(x):
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _make(e, (x,), "exp", lambda g: (g * e,))


def log(x):
    if (x.data <= 0).any():
        raise NumericError("log of non-positive value")
    xd = x.data
    return _make(np.log(xd), (x,), "log", lambda g: (g / xd,))


def abs_(x):
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), "abs", lambda g: (g * sgn,))


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), "softmax", bw)


def layernorm(x, eps=1e-5):
    """Normalize over the last axis (no affine part)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (x,), "layernorm", bw)


# ---------------------------------------------------------------------------
# reductions and losses


def sum_(x, axis=None):
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axis), dtype=np.float64)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (x,), "sum", bw)


def mean(x, axis=None):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    shape = x.shape
    out = np.asarray(x.data.mean(axis=axis), dtype=np.float64)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(out, (x,), "mean", bw)


def bce_loss(p, y, eps=BCE_EPS):
    """Mean binary cross-entropy of probabilities ``p`` against targets ``y``.

    Probabilities are clamped to ``[eps, 1 - eps]``; the gradient is the
    analytic one evaluated at the clamped value.
    """
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if yd.shape != p.shape:
        raise DimensionError(f"bce-loss: prediction shape {p.shape} != target shape {yd.shape}")
    pc = np.clip(p.data, eps, 1.0 - eps)
    n = pc.size
    loss = -(yd * np.log(pc) + (1.0 - yd) * np.log(1.0 - pc)).mean()

    def bw(g):
        return (g * (pc - yd) / (pc * (1.0 - pc)) / n,)

    return _make(np.asarray(loss), (p,), "bce-loss", bw)


def expand_last(x, n):
    """Repeat a ``(..., 1)``-free tensor ``n`` times along a new last axis."""
    col = reshape(x, x.shape + (1,))
    return matmul(col, constant(np.ones((1, n))))


# ---------------------------------------------------------------------------
# optimisation


class LrSchedule:
    """Step decay: ``initial_lr * decay_factor ** (epoch // decay_every)``."""

    def __init__(self, initial_lr=0.001, decay_factor=0.01, decay_every=25):
        if not initial_lr > 0:
            raise ContractError("initial_lr must be > 0")
        if not 0 < decay_factor <= 1:
            raise ContractError("decay_factor must be in (0, 1]")
        if int(decay_every) != decay_every or decay_every < 1:
            raise ContractError("decay_every must be an integer >= 1")
        self.initial_lr = float(initial_lr)
        self.decay_factor = float(decay_factor)
        self.decay_every = int(decay_every)

    def lr(self, epoch):
        if epoch < 0:
            raise ContractError("epoch must be >= 0")
        return self.initial_lr * self.decay_factor ** (epoch // self.decay_every)

    def __repr__(self):
        return (f"LrSchedule(initial_lr={self.initial_lr}, decay_factor={self.decay_factor}, "
                f"decay_every={self.decay_every})")


def sgd_step(params: Iterable[Tensor], grads, schedule: LrSchedule, epoch):
    """In-place ``p <- p - lr(epoch) * g``.

    ``grads`` is either a list aligned with ``params`` or a mapping keyed by
    tensor id (as returned by :func:`backward`).
    """
    params = list(params)
    lr = schedule.lr(epoch)
    if isinstance(grads, dict):
        missing = [p for p in params if p.id not in grads]
        if missing:
            raise ContractError(f"missing gradient for {len(missing)} parameter(s)")
        grads = [grads[p.id] for p in params]
    else:
        grads = list(grads)
        if len(grads) != len(params) or any(g is None for g in grads):
            raise ContractError("missing gradient: grads must align with params")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise DimensionError(f"sgd_step: gradient shape {g.shape} != parameter shape {p.shape}")
        p.data = _finite_update(p.data - lr * g, "sgd_step")
    return params


def _finite_update(new, who):
    if not np.isfinite(new).all():
        raise NumericError(f"{who}: parameter update produced non-finite values")
    return new


class Adam:
    """Adam with the learning rate supplied per step (from an LrSchedule)."""

    def __init__(self, params: Sequence[Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            with np.errstate(over="ignore", invalid="ignore"):
                new = p.data - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = _finite_update(new, "adam")

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class SGD:
    """Plain SGD with the same interface as :class:`Adam`."""

    def __init__(self, params: Sequence[Tensor]):
        self.params = list(params)

    def step(self, lr):
        for p in self.params:
            if p.grad is not None:
                with np.errstate(over="ignore", invalid="ignore"):
                    new = p.data - lr * p.grad
                p.data = _finite_update(new, "sgd")

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def make_optimizer(kind, params):
    if kind == "adam":
        return Adam(params)
    if kind == "sgd":
        return SGD(params)
    raise ContractError(f"unknown optimizer {kind!r}")


def glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))

