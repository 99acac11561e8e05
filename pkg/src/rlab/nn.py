"""Layers built on the autodiff core: linear maps and a gated recurrent encoder."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import DimensionError


class Module:
    """Parameter container; subclasses register tensors and child modules as attributes."""

    def named_tensors(self, prefix=""):
        """Every tensor attribute, trainable or frozen, keyed by dotted path."""
        out = {}
        for key, val in vars(self).items():
            if isinstance(val, ad.Tensor):
                out[prefix + key] = val
            elif isinstance(val, Module):
                out.update(val.named_tensors(prefix + key + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_tensors(f"{prefix}{key}.{i}."))
        return out

    def named_parameters(self, prefix=""):
        return {k: t for k, t in self.named_tensors(prefix).items() if t.requires_grad}

    def parameters(self):
        return list(self.named_parameters().values())

    def load_state(self, state):
        params = self.named_tensors()
        for name, p in params.items():
            if name not in state:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def state(self):
        return {name: p.data for name, p in self.named_tensors().items()}


class Linear(Module):
    def __init__(self, rng, n_in, n_out, bias=True):
        self.weight = ad.parameter(ad.glorot(rng, n_in, n_out))
        self.bias = ad.parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


@np.errstate(over="ignore", invalid="ignore")   # non-finite output is reported by the op check
def gru(x, w_in, w_hid, bias, step_mask=None):
    """Run a GRU over ``x`` of shape ``(B, T, E)``; returns hidden states ``(B, T, H)``.

    Gates follow ``r, z = sigmoid(.)``, ``n = tanh(x W_n + b_n + r * (h U_n))``,
    ``h' = (1 - z) n + z h``.  Where ``step_mask[b, t] == 0`` the state is carried
    over unchanged, so the last state equals the state after the last real token.
    Forward and backward-through-time are fused into one graph node.
    """
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"gru: input must be (B, T, E), got {x.shape}")
    B, T, E = xd.shape
    H = w_hid.shape[0]
    if w_in.shape != (E, 3 * H) or w_hid.shape != (H, 3 * H) or bias.shape != (3 * H,):
        raise DimensionError(f"gru: weight shapes {w_in.shape}, {w_hid.shape}, {bias.shape} "
                             f"do not fit input width {E} and hidden width {H}")
    m = np.ones((B, T)) if step_mask is None else np.asarray(step_mask, dtype=np.float64)
    if m.shape != (B, T):
        raise DimensionError(f"gru: step mask shape {m.shape} != {(B, T)}")
    Wx, Wh = w_in.data, w_hid.data
    gx = (xd.reshape(B * T, E) @ Wx + bias.data).reshape(B, T, 3 * H)
    hs = np.empty((B, T, H))
    rz = np.empty((B, T, 2 * H))
    ns = np.empty((B, T, H))
    ghn = np.empty((B, T, H))
    full = m.min(axis=0) == 1.0
    h = np.zeros((B, H))
    for t in range(T):
        gh = h @ Wh
        g = gx[:, t]
        a = g[:, :2 * H] + gh[:, :2 * H]
        a *= 0.5
        np.tanh(a, out=a)
        a += 1.0
        a *= 0.5
        r, z = a[:, :H], a[:, H:]
        ghn[:, t] = gh[:, 2 * H:]
        n = np.tanh(g[:, 2 * H:] + r * gh[:, 2 * H:])
        hn = n + z * (h - n)
        if not full[t]:
            mt = m[:, t:t + 1]
            hn = h + mt * (hn - h)
        h = hn
        hs[:, t], rz[:, t], ns[:, t] = h, a, n

    def bw(dH):
        dgx = np.empty((B, T, 3 * H))
        dWh = np.zeros_like(Wh)
        dh = np.zeros((B, H))
        zeros = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh + dH[:, t]
            h_prev = hs[:, t - 1] if t > 0 else zeros
            if full[t]:
                dhn, dprev = dh, 0.0
            else:
                mt = m[:, t:t + 1]
                dhn = mt * dh
                dprev = dh - dhn
            r, z = rz[:, t, :H], rz[:, t, H:]
            n = ns[:, t]
            dan = dhn * (1.0 - z) * (1.0 - n * n)
            d = dgx[:, t]
            d[:, :H] = dan * ghn[:, t] * r * (1.0 - r)
            d[:, H:2 * H] = dhn * (h_prev - n) * z * (1.0 - z)
            d[:, 2 * H:] = dan
            dgh = d.copy()
            dgh[:, 2 * H:] *= r
            dWh += h_prev.T @ dgh
            dh = dprev + dhn * z + dgh @ Wh.T
        flat = dgx.reshape(B * T, 3 * H)
        dx = (flat @ Wx.T).reshape(B, T, E) if x.requires_grad else None
        dWx = xd.reshape(B * T, E).T @ flat if w_in.requires_grad else None
        return dx, dWx, dWh, flat.sum(axis=0)

    return ad._make(hs, (x, w_in, w_hid, bias), "gru", bw)


def gru_composed(x, w_in, w_hid, bias, step_mask=None):
    """Same function as :func:`gru` built from primitive ops (slow; a test oracle)."""
    B, T, _ = x.shape
    H = w_hid.shape[0]
    m = np.ones((B, T)) if step_mask is None else np.asarray(step_mask, dtype=np.float64)
    gx = ad.matmul(x, w_in) + bias
    h = ad.constant(np.zeros((B, H)))
    states = []
    for t in range(T):
        g = gx[:, t, :]
        gh = ad.matmul(h, w_hid)
        r = ad.sigmoid(g[:, :H] + gh[:, :H])
        z = ad.sigmoid(g[:, H:2 * H] + gh[:, H:2 * H])
        n = ad.tanh(g[:, 2 * H:] + r * gh[:, 2 * H:])
        hn = n + z * (h - n)
        mt = ad.constant(np.repeat(m[:, t:t + 1], H, axis=1))
        h = h + mt * (hn - h)
        states.append(h)
    return ad.stack(states, axis=1)


class GRU(Module):
    def __init__(self, rng, n_in, hidden):
        self.w_in = ad.parameter(ad.glorot(rng, n_in, 3 * hidden))
        q, _ = np.linalg.qr(rng.normal(size=(hidden, hidden)))
        self.w_hid = ad.parameter(np.concatenate([q, q.T, q], axis=1))
        self.bias = ad.parameter(np.zeros(3 * hidden))
        self.hidden = hidden

    def __call__(self, x, step_mask=None):
        return gru(x, self.w_in, self.w_hid, self.bias, step_mask)


def reverse_time(x, lengths):
    """Reverse each sequence's first ``lengths[b]`` steps of a ``(B, T, D)`` tensor; padding stays put."""
    B, T = x.shape[0], x.shape[1]
    idx = np.tile(np.arange(T), (B, 1))
    for b, n in enumerate(lengths):
        idx[b, :n] = np.arange(n)[::-1]
    rows = np.repeat(np.arange(B)[:, None], T, axis=1)
    return ad.getitem(x, (rows, idx))


class BiGRU(Module):
    """Forward and length-aware backward GRU; states are concatenated to width 2H."""

    def __init__(self, rng, n_in, hidden):
        self.fwd = GRU(rng, n_in, hidden)
        self.bwd = GRU(rng, n_in, hidden)
        self.hidden = 2 * hidden

    def __call__(self, x, step_mask):
        lengths = np.asarray(step_mask).sum(axis=1).astype(int)
        forward = self.fwd(x, step_mask)
        backward = reverse_time(self.bwd(reverse_time(x, lengths), step_mask), lengths)
        return ad.concat([forward, backward], axis=2)


def last_state(states):
    """Final hidden state ``(B, H)`` of a ``(B, T, H)`` sequence from :func:`gru`."""
    return states[:, states.shape[1] - 1, :]


def masked_mean(states, step_mask):
    """Mean over time of ``(B, T, H)`` states, counting only positions where mask is 1."""
    m = np.asarray(step_mask, dtype=np.float64)
    B, T, H = states.shape
    w = m / np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    weights = ad.constant(np.repeat(w[:, :, None], H, axis=2))
    return ad.sum_(states * weights, axis=1)
