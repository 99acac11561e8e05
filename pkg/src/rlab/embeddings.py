"""Skip-gram word vectors trained with negative sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .text import CLS, PAD, UNK, Document, Vocab


@dataclass
class EmbeddingMatrix:
    matrix: np.ndarray
    losses: list = field(default_factory=list)

    @property
    def dim(self):
        return self.matrix.shape[1]

    def __post_init__(self):
        if not np.isfinite(self.matrix).all():
            raise ContractError("embedding matrix has non-finite values")
        self.matrix[PAD] = 0.0


def _pairs(id_seqs, window):
    centers, contexts = [], []
    for seq in id_seqs:
        seq = np.asarray(seq)
        n = len(seq)
        for off in range(1, window + 1):
            if off >= n:
                break
            centers.extend([seq[:-off], seq[off:]])
            contexts.extend([seq[off:], seq[:-off]])
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def train_skipgram(corpus: Sequence[Document], vocab: Vocab, dim=100, window=5, negatives=5,
                   epochs=5, seed=0, lr=0.025, batch_size=256) -> EmbeddingMatrix:
    """Skip-gram with negative sampling over in-vocabulary tokens.

    Noise words are drawn from the unigram distribution raised to 0.75 and the
    learning rate decays linearly to ``1e-4 * lr``.  Returns the input vectors;
    ``losses`` holds the mean per-pair loss of each epoch.
    """
    if window < 1 or negatives < 1:
        raise ContractError("window and negatives must be >= 1")
    seqs = [[i for i in vocab.encode(d.tokens) if i > CLS] for d in corpus]
    n_tokens = sum(len(s) for s in seqs)
    if n_tokens <= window:
        raise ContractError(f"corpus of {n_tokens} in-vocabulary tokens is smaller than window {window}")
    centers, contexts = _pairs(seqs, window)
    rng = np.random.default_rng(seed)
    V = len(vocab)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))
    freq = np.zeros(V)
    for s in seqs:
        np.add.at(freq, s, 1.0)
    noise = freq ** 0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)

    n_pairs = len(centers)
    total_steps = epochs * ((n_pairs + batch_size - 1) // batch_size)
    step = 0
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for start in range(0, n_pairs, batch_size):
            idx = order[start:start + batch_size]
            c, o = centers[idx], contexts[idx]
            neg = np.searchsorted(noise_cdf, rng.random((len(idx), negatives)), side="right")
            neg = np.minimum(neg, V - 1)
            alpha = lr * max(1e-4, 1.0 - step / total_steps)
            step += 1

            vc = w_in[c]                                   # (b, d)
            targets = np.concatenate([o[:, None], neg], axis=1)   # (b, 1+k)
            u = w_out[targets]                             # (b, 1+k, d)
            score = np.einsum("bkd,bd->bk", u, vc)
            label = np.zeros_like(score)
            label[:, 0] = 1.0
            sig = 0.5 * (1.0 + np.tanh(0.5 * score))
            p = np.clip(np.where(label == 1.0, sig, 1.0 - sig), 1e-12, 1.0)
            epoch_loss += float(-np.log(p).sum())
            g = sig - label                                # d loss / d score
            grad_vc = np.einsum("bk,bkd->bd", g, u)
            grad_u = g[:, :, None] * vc[:, None, :]
            np.add.at(w_out, targets.reshape(-1), -alpha * grad_u.reshape(-1, dim))
            np.add.at(w_in, c, -alpha * grad_vc)
        losses.append(epoch_loss / n_pairs)
    w_in[UNK] = 0.0
    return EmbeddingMatrix(w_in, losses)


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))
