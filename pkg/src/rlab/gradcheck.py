"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_op: dict = field(default_factory=dict)
    n_points: int = 0
    seconds: float = 0.0

    def passed(self, tol=1e-4):
        return self.max_rel_error < tol


def numeric_grad(f, inputs, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of each input tensor."""
    grads = []
    with ad.no_grad():
        for t in inputs:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def analytic_grad(f, inputs):
    for t in inputs:
        t.grad = None
    ad.backward(f())
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]


def check(f, inputs, h=1e-5):
    """Max relative error between backward() and finite differences for ``f``."""
    a = analytic_grad(f, inputs)
    n = numeric_grad(f, inputs, h)
    return max(float(relative_error(x, y).max()) for x, y in zip(a, n))


def gradcheck(builder, seed, n_points=3, h=1e-5):
    """Run ``builder(rng) -> (f, inputs)`` at ``n_points`` random draws."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        f, inputs = builder(rng)
        worst = max(worst, check(f, inputs, h))
    return worst


def _projected(out_fn, rng, shape):
    # random linear functional turns any output into a scalar
    w = ad.constant(rng.normal(size=shape))
    return lambda: ad.sum_(out_fn() * w)


def _p(rng, *shape, low=None, high=None):
    if low is not None:
        return ad.parameter(rng.uniform(low, high, size=shape))
    return ad.parameter(rng.normal(size=shape))


def _away_from_zero(rng, *shape):
    x = rng.uniform(0.2, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return ad.parameter(x)


def _builders():
    b = {}

    def matmul(rng):
        a, c = _p(rng, 3, 4), _p(rng, 4, 2)
        return _projected(lambda: ad.matmul(a, c), rng, (3, 2)), [a, c]

    def matmul_batched(rng):
        a, c = _p(rng, 2, 3, 4), _p(rng, 2, 4, 3)
        return _projected(lambda: ad.matmul(a, c), rng, (2, 3, 3)), [a, c]

    def matmul_nd2d(rng):
        a, c = _p(rng, 2, 3, 4), _p(rng, 4, 2)
        return _projected(lambda: ad.matmul(a, c), rng, (2, 3, 2)), [a, c]

    def add(rng):
        a, c = _p(rng, 3, 4), _p(rng, 3, 4)
        return _projected(lambda: ad.add(a, c), rng, (3, 4)), [a, c]

    def add_bias(rng):
        a, c = _p(rng, 2, 3, 4), _p(rng, 4)
        return _projected(lambda: ad.add(a, c), rng, (2, 3, 4)), [a, c]

    def sub(rng):
        a, c = _p(rng, 3, 4), _p(rng, 4)
        return _projected(lambda: ad.sub(a, c), rng, (3, 4)), [a, c]

    def mul(rng):
        a, c = _p(rng, 3, 4), _p(rng, 3, 4)
        return _projected(lambda: ad.mul(a, c), rng, (3, 4)), [a, c]

    def concat(rng):
        a, c = _p(rng, 2, 3), _p(rng, 2, 5)
        return _projected(lambda: ad.concat([a, c], axis=1), rng, (2, 8)), [a, c]

    def sigmoid(rng):
        a = _p(rng, 3, 4)
        return _projected(lambda: ad.sigmoid(a), rng, (3, 4)), [a]

    def tanh(rng):
        a = _p(rng, 3, 4)
        return _projected(lambda: ad.tanh(a), rng, (3, 4)), [a]

    def relu(rng):
        a = _away_from_zero(rng, 3, 4)
        return _projected(lambda: ad.relu(a), rng, (3, 4)), [a]

    def softmax0(rng):
        a = _p(rng, 3, 4)
        return _projected(lambda: ad.softmax(a, axis=0), rng, (3, 4)), [a]

    def softmax1(rng):
        a = _p(rng, 2, 3, 4)
        return _projected(lambda: ad.softmax(a, axis=-1), rng, (2, 3, 4)), [a]

    def embedding(rng):
        w = _p(rng, 6, 3)
        ids = rng.integers(0, 6, size=(2, 5))
        return _projected(lambda: ad.embedding(w, ids), rng, (2, 5, 3)), [w]

    def bce(rng):
        p = _p(rng, 5, low=0.1, high=0.9)
        y = ad.constant(rng.integers(0, 2, size=5).astype(float))
        return (lambda: ad.bce_loss(p, y)), [p]

    def mean(rng):
        a = _p(rng, 3, 4)
        return _projected(lambda: ad.mean(a, axis=1), rng, (3,)), [a]

    def mean_all(rng):
        a = _p(rng, 3, 4)
        return (lambda: ad.mean(a)), [a]

    def sum_(rng):
        a = _p(rng, 3, 4)
        return _projected(lambda: ad.sum_(a, axis=0), rng, (4,)), [a]

    def transpose(rng):
        a = _p(rng, 2, 3, 4)
        return _projected(lambda: ad.transpose(a, (2, 0, 1)), rng, (4, 2, 3)), [a]

    def scale(rng):
        a = _p(rng, 3, 4)
        c = float(rng.normal())
        return _projected(lambda: ad.scale(a, c), rng, (3, 4)), [a]

    def shift(rng):
        a = _p(rng, 3, 4)
        return _projected(lambda: ad.shift(a, 0.7), rng, (3, 4)), [a]

    def reshape(rng):
        a = _p(rng, 3, 4)
        return _projected(lambda: ad.reshape(a, (2, 6)), rng, (2, 6)), [a]

    def getitem(rng):
        a = _p(rng, 3, 4, 5)
        return _projected(lambda: a[:, 1, 2:4], rng, (3, 2)), [a]

    def exp(rng):
        a = _p(rng, 3, 4)
        return _projected(lambda: ad.exp(a), rng, (3, 4)), [a]

    def log(rng):
        a = _p(rng, 3, 4, low=0.5, high=3.0)
        return _projected(lambda: ad.log(a), rng, (3, 4)), [a]

    def abs_(rng):
        a = _away_from_zero(rng, 3, 4)
        return _projected(lambda: ad.abs_(a), rng, (3, 4)), [a]

    def layernorm(rng):
        a = _p(rng, 2, 3, 6)
        return _projected(lambda: ad.layernorm(a), rng, (2, 3, 6)), [a]

    def gru(rng):
        layer = nn.GRU(rng, 4, 3)
        x = _p(rng, 2, 5, 4)
        mask = np.ones((2, 5))
        mask[1, 3:] = 0
        inputs = [x] + layer.parameters()
        return _projected(lambda: layer(x, mask), rng, (2, 5, 3)), inputs

    for name, fn in list(locals().items()):
        if callable(fn) and name not in ("b",):
            b[name.rstrip("_")] = fn
    return b


OP_BUILDERS = _builders()


def gradcheck_all_ops(seed=0, n_points=3, h=1e-5):
    """Finite-difference check of every op kind at ``n_points`` random draws."""
    start = time.perf_counter()
    per_op = {name: gradcheck(builder, seed + i, n_points, h)
              for i, (name, builder) in enumerate(sorted(OP_BUILDERS.items()))}
    return GradcheckReport(max(per_op.values()), per_op, n_points, time.perf_counter() - start)
