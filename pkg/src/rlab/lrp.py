"""Epsilon-rule layer-wise relevance propagation primitives.

For a linear map ``z_k = sum_j a_j w_jk + b_k`` relevance flows back as

    R_j = sum_k a_j w_jk / (z_k + eps * sign(z_k)) * R_k

The bias gets no credit: its share of each ``R_k`` is dropped and shows up
as leakage (output relevance minus what reaches the input).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _stabilize(z, eps):
    sign = np.where(z >= 0, 1.0, -1.0)
    den = z + eps * sign
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(den == 0, 0.0, 1.0 / np.where(den == 0, 1.0, den))
    return inv


def lrp_linear(a, w, b, r_out, eps=1e-6):
    """Relevance at the input of ``a @ w + b`` given relevance ``r_out`` at its output.

    ``a`` is ``(..., n_in)``, ``w`` is ``(n_in, n_out)``, ``r_out`` is ``(..., n_out)``.
    """
    z = a @ w
    if b is not None:
        z = z + b
    s = r_out * _stabilize(z, eps)
    return a * (s @ w.T)


def lrp_elementwise(parts, total, r_out, eps=1e-6):
    """Split ``r_out`` over additive ``parts`` of ``total`` (a residual sum or an affine map).

    Any part of ``total`` not listed (a bias) keeps its share as leakage.
    """
    s = r_out * _stabilize(total, eps)
    return [p * s for p in parts]


def lrp_attention_values(weights, values, r_ctx, eps=1e-6):
    """Relevance on values ``(m, dv)`` of ``ctx = weights @ values`` with weights held fixed."""
    ctx = weights @ values
    s = r_ctx * _stabilize(ctx, eps)
    return values * (weights.T @ s)


@dataclass
class MLPRelevance:
    input_relevance: np.ndarray
    output_relevance: float
    layer_sums: list = field(default_factory=list)

    @property
    def leakage(self):
        return self.output_relevance - float(self.input_relevance.sum())


def mlp_forward(weights, biases, x):
    """ReLU MLP with a linear last layer; returns every layer input plus the output."""
    acts = [np.asarray(x, dtype=np.float64)]
    h = acts[0]
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + (0.0 if b is None else b)
        if i < len(weights) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def lrp_mlp(weights, biases, x, eps=0.0, output_relevance=None):
    """Propagate a single-output MLP's output (default: its value) back to ``x``."""
    acts = mlp_forward(weights, biases, x)
    out = acts[-1]
    r = np.array(out if output_relevance is None else output_relevance, dtype=np.float64).reshape(out.shape)
    first = float(r.sum())
    sums = [first]
    for i in range(len(weights) - 1, -1, -1):
        r = lrp_linear(acts[i], weights[i], biases[i], r, eps)
        sums.append(float(r.sum()))
    return MLPRelevance(r, first, sums[::-1])
