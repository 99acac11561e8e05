"""A small post-LN transformer classifier with attention and relevance explanations."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ContractError, DimensionError
from .lrp import lrp_attention_values, lrp_elementwise, lrp_linear
from .text import CLS, MAX_SEQ_LEN, PAD, Document, Vocab

log = logging.getLogger(__name__)

MASK_FILL = -1e9
LN_EPS = 1e-5
STRATEGIES = ("cls-to-token", "mean-over-heads")


def attention(Q, K, V, d):
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d)) V``.

    Returns ``(output, weights)`` with ``weights`` of shape ``(n, m)``.
    """
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise DimensionError("attention: Q, K, V must be 2-D")
    if Q.shape[1] != d or K.shape[1] != d:
        raise DimensionError(f"attention: Q {Q.shape} and K {K.shape} must both have width d={d}")
    if K.shape[0] != V.shape[0]:
        raise DimensionError(f"attention: {K.shape[0]} keys but {V.shape[0]} values")
    s = Q @ K.T / math.sqrt(d)
    s -= s.max(axis=1, keepdims=True)
    w = np.exp(s)
    w /= w.sum(axis=1, keepdims=True)
    return w @ V, w


@dataclass
class TransformerConfig:
    d_model: int = 64
    n_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    max_seq_len: int = MAX_SEQ_LEN
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 32
    patience: int = 3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ContractError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if min(self.d_model, self.n_layers, self.heads, self.epochs, self.batch_size) < 1:
            raise ContractError("sizes and epochs must be positive")


class _Layer(nn.Module):
    def __init__(self, rng, d, d_ff):
        self.q = nn.Linear(rng, d, d)
        self.k = nn.Linear(rng, d, d)
        self.v = nn.Linear(rng, d, d)
        self.o = nn.Linear(rng, d, d)
        self.ln1_g = ad.parameter(np.ones(d))
        self.ln1_b = ad.parameter(np.zeros(d))
        self.ff1 = nn.Linear(rng, d, d_ff)
        self.ff2 = nn.Linear(rng, d_ff, d)
        self.ln2_g = ad.parameter(np.ones(d))
        self.ln2_b = ad.parameter(np.zeros(d))


class TinyTransformer(nn.Module):
    def __init__(self, vocab_size, config: TransformerConfig = None):
        config = config or TransformerConfig()
        self.config = config
        d = config.d_model
        rng = np.random.default_rng(config.seed)
        self.tok = ad.parameter(rng.normal(0, 0.1, size=(vocab_size, d)))
        self.tok.data[PAD] = 0.0
        self.pos = ad.parameter(rng.normal(0, 0.1, size=(config.max_seq_len + 1, d)))
        self.layers = [_Layer(rng, d, config.ffn_mult * d) for _ in range(config.n_layers)]
        wide = round(d * 2048 / 768)
        self.head = [nn.Linear(rng, d, wide), nn.Linear(rng, wide, d), nn.Linear(rng, d, 1)]

    @property
    def heads(self):
        return self.config.heads

    @property
    def max_tokens(self):
        return self.config.max_seq_len


def _split_heads(x, B, T, h, dh):
    return ad.transpose(ad.reshape(x, (B, T, h, dh)), (0, 2, 1, 3))


def _ln(x, g, b, cache, key):
    y = ad.layernorm(x, LN_EPS) * g + b
    if cache is not None:
        xd = x.data
        inv = 1.0 / np.sqrt(xd.var(axis=-1, keepdims=True) + LN_EPS)
        cache[key] = {"inv": inv, "mu": xd.mean(axis=-1, keepdims=True)}
    return y


def forward_batch(model: TinyTransformer, ids, mask, cache=None):
    """Probabilities ``(B,)`` for CLS-prefixed ids ``(B, T)``; fills ``cache`` with numpy arrays."""
    B, T = ids.shape
    d, h = model.config.d_model, model.heads
    dh = d // h
    x = ad.embedding(model.tok, ids, padding_idx=PAD) + model.pos[:T]
    key_bias = np.where(mask[:, None, None, :] > 0, 0.0, MASK_FILL)
    key_bias = ad.constant(np.broadcast_to(key_bias, (B, h, T, T)).copy())
    if cache is not None:
        cache["x0"] = x.data
        cache["layers"] = []
    for layer in model.layers:
        c = {} if cache is not None else None
        q = _split_heads(layer.q(x), B, T, h, dh)
        k = _split_heads(layer.k(x), B, T, h, dh)
        v = _split_heads(layer.v(x), B, T, h, dh)
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh)) + key_bias
        a = ad.softmax(scores, axis=-1)
        ctx = ad.reshape(ad.transpose(ad.matmul(a, v), (0, 2, 1, 3)), (B, T, d))
        att = layer.o(ctx)
        s1 = x + att
        x1 = _ln(s1, layer.ln1_g, layer.ln1_b, c, "ln1")
        u = ad.relu(layer.ff1(x1))
        f = layer.ff2(u)
        s2 = x1 + f
        x2 = _ln(s2, layer.ln2_g, layer.ln2_b, c, "ln2")
        if c is not None:
            c.update(x=x.data, q=q.data, k=k.data, v=v.data, attn=a.data, ctx=ctx.data, att=att.data,
                     s1=s1.data, x1=x1.data, u=u.data, f=f.data, s2=s2.data, x2=x2.data)
            cache["layers"].append(c)
        x = x2
    cls = x[:, 0, :]
    h1 = ad.relu(model.head[0](cls))
    h2 = ad.relu(model.head[1](h1))
    logit = model.head[2](h2)
    if cache is not None:
        cache.update(cls=cls.data, h1=h1.data, h2=h2.data, logit=logit.data[:, 0])
    return ad.sigmoid(ad.reshape(logit, (B,)))


def _encode(docs, vocab, max_tokens):
    truncated = [len(d.tokens) > max_tokens for d in docs]
    rows = [[CLS] + vocab.encode(d.tokens[:max_tokens]) for d in docs]
    T = max(len(r) for r in rows)
    ids = np.full((len(docs), T), PAD, dtype=np.int64)
    mask = np.zeros((len(docs), T))
    for b, r in enumerate(rows):
        ids[b, :len(r)] = r
        mask[b, :len(r)] = 1.0
    return ids, mask, truncated


@dataclass
class ForwardResult:
    probability: float
    attention: list          # per layer, array (heads, T, T) including the CLS position
    cache: dict
    truncated: bool
    n_tokens: int


def transformer_forward(model: TinyTransformer, doc: Document, vocab: Vocab) -> ForwardResult:
    ids, mask, truncated = _encode([doc], vocab, model.max_tokens)
    if truncated[0]:
        log.warning("%s: %d tokens truncated to %d", doc.doc_id, len(doc.tokens), model.max_tokens)
    cache = {}
    with ad.no_grad():
        p = forward_batch(model, ids, mask, cache)
    cache = _first(cache)
    maps = [c["attn"] for c in cache["layers"]]
    return ForwardResult(float(p.data[0]), maps, cache, truncated[0], ids.shape[1] - 1)


def _first(cache):
    """Strip the batch axis of a single-document cache."""
    out = {k: (v[0] if isinstance(v, np.ndarray) else v) for k, v in cache.items() if k != "layers"}
    out["layers"] = [{k: (v[0] if isinstance(v, np.ndarray) else {kk: vv[0] for kk, vv in v.items()})
                      for k, v in c.items()} for c in cache["layers"]]
    return out


def predict_proba(model: TinyTransformer, docs: Sequence[Document], vocab: Vocab, batch_size=256):
    out = []
    with ad.no_grad():
        for start in range(0, len(docs), batch_size):
            ids, mask, _ = _encode(docs[start:start + batch_size], vocab, model.max_tokens)
            out.append(forward_batch(model, ids, mask).data)
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# explanations


def attention_importance(maps, layer=-1, strategy="cls-to-token", n_tokens=None):
    """Per-token importance from attention maps of one document.

    ``maps[layer]`` is ``(heads, T, T)`` with position 0 the CLS token.
    ``cls-to-token`` reads the CLS query row; ``mean-over-heads`` averages the
    attention each token receives over all real query rows.  Either way heads
    are averaged and the scores are renormalized over the real tokens, so the
    result has one entry per document token.
    """
    if strategy not in STRATEGIES:
        raise ContractError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if not -len(maps) <= layer < len(maps):
        raise IndexError(f"layer {layer} out of range for {len(maps)} layers")
    A = np.asarray(maps[layer], dtype=np.float64)
    T = A.shape[-1]
    n = T - 1 if n_tokens is None else n_tokens
    if strategy == "cls-to-token":
        s = A[:, 0, 1:n + 1].mean(axis=0)
    else:
        s = A[:, :n + 1, 1:n + 1].mean(axis=(0, 1))
    total = s.sum()
    return s / total if total > 0 else np.full(n, 1.0 / n)


@dataclass
class RelevanceMap:
    scores: np.ndarray          # one entry per document token
    output_relevance: float
    cls_relevance: float
    layer_sums: list = field(default_factory=list)

    @property
    def input_sum(self):
        return float(self.scores.sum()) + self.cls_relevance

    @property
    def leakage(self):
        return self.output_relevance - self.input_sum


def _lrp_ln(c, g, b, x_in, r_out, eps):
    # statistics frozen: y = (g * inv) * x + (b - g * inv * mu); the constant keeps its share
    scale = g * c["inv"]
    y = scale * x_in + (b - scale * c["mu"])
    return lrp_elementwise([scale * x_in], y, r_out, eps)[0]


def lrp_relevance(model: TinyTransformer, doc: Document, cache, epsilon=1e-6, output_relevance=None):
    """Epsilon-rule relevance of each document token for the output logit."""
    if not cache or "layers" not in cache or "logit" not in cache:
        raise ContractError("lrp_relevance needs the activation cache from transformer_forward")
    if epsilon < 0:
        raise ContractError("epsilon must be >= 0")
    eps = epsilon
    out = float(cache["logit"]) if output_relevance is None else float(output_relevance)
    sums = [out]
    r = np.array([out])
    head = model.head
    r = lrp_linear(cache["h2"], head[2].weight.data, head[2].bias.data, r, eps)
    r = lrp_linear(cache["h1"], head[1].weight.data, head[1].bias.data, r, eps)
    r = lrp_linear(cache["cls"], head[0].weight.data, head[0].bias.data, r, eps)
    sums.append(float(r.sum()))
    T = cache["x0"].shape[0]
    R = np.zeros((T, model.config.d_model))
    R[0] = r
    h = model.heads
    for layer, c in zip(reversed(model.layers), reversed(cache["layers"])):
        r_s2 = _lrp_ln(c["ln2"], layer.ln2_g.data, layer.ln2_b.data, c["s2"], R, eps)
        r_x1, r_f = lrp_elementwise([c["x1"], c["f"]], c["s2"], r_s2, eps)
        r_u = lrp_linear(c["u"], layer.ff2.weight.data, layer.ff2.bias.data, r_f, eps)
        r_x1 = r_x1 + lrp_linear(c["x1"], layer.ff1.weight.data, layer.ff1.bias.data, r_u, eps)
        r_s1 = _lrp_ln(c["ln1"], layer.ln1_g.data, layer.ln1_b.data, c["s1"], r_x1, eps)
        r_x, r_att = lrp_elementwise([c["x"], c["att"]], c["s1"], r_s1, eps)
        r_ctx = lrp_linear(c["ctx"], layer.o.weight.data, layer.o.bias.data, r_att, eps)
        dh = r_ctx.shape[1] // h
        r_v = np.empty_like(r_ctx)
        for j in range(h):
            cols = slice(j * dh, (j + 1) * dh)
            r_v[:, cols] = lrp_attention_values(c["attn"][j], c["v"][j], r_ctx[:, cols], eps)
        R = r_x + lrp_linear(c["x"], layer.v.weight.data, layer.v.bias.data, r_v, eps)
        sums.append(float(R.sum()))
    tok = R.sum(axis=1)
    return RelevanceMap(tok[1:], out, float(tok[0]), sums[::-1])


# ---------------------------------------------------------------------------
# training


def _loss(model, docs, vocab):
    ids, mask, _ = _encode(docs, vocab, model.max_tokens)
    p = forward_batch(model, ids, mask)
    return ad.bce_loss(p, np.array([d.label for d in docs], dtype=np.float64))


def _val_loss(model, docs, vocab):
    p = np.clip(predict_proba(model, docs, vocab), 1e-7, 1 - 1e-7)
    y = np.array([d.label for d in docs], dtype=np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def train_transformer(train_docs, val_docs, vocab: Vocab, config: TransformerConfig = None, progress=None):
    """Adam on BCE with early stopping on validation loss; returns the best model and history rows."""
    from .metrics import roc_auc_or_nan

    config = config or TransformerConfig()
    model = TinyTransformer(len(vocab), config)
    opt = ad.make_optimizer(config.optimizer, model.parameters())
    rng = np.random.default_rng(config.seed + 1)
    best, best_state, bad = math.inf, model.state(), 0
    best_state = {k: v.copy() for k, v in best_state.items()}
    rows = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_docs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_docs[i] for i in order[start:start + config.batch_size]]
            opt.zero_grad()
            loss = _loss(model, batch, vocab)
            ad.backward(loss)
            opt.step(config.lr)
            model.tok.data[PAD] = 0.0
            total += loss.item() * len(batch)
        row = {"epoch": epoch, "lr": config.lr, "train_loss": total / len(train_docs)}
        if val_docs:
            row["val_loss"] = _val_loss(model, val_docs, vocab)
            row["val_auc"] = roc_auc_or_nan(predict_proba(model, val_docs, vocab),
                                            [d.label for d in val_docs])
        rows.append(row)
        if progress:
            progress(row)
        log.info("transformer epoch %d %s", epoch, row)
        current = row.get("val_loss", row["train_loss"])
        if current < best:
            best, bad = current, 0
            best_state = {k: v.copy() for k, v in model.state().items()}
        else:
            bad += 1
            if bad >= config.patience:
                break
    model.load_state(best_state)
    return model, rows
