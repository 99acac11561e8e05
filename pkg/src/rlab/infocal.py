"""Selector / guider / predictor / discriminator rationale model.

The selector emits a keep probability per token.  A hard Bernoulli mask
(straight-through, relaxed by Gumbel noise) zeroes the embeddings of dropped
tokens before the predictor sees them; the guider reads the full document.
A discriminator learns to tell predictor hidden states (selector path) from
guider hidden states, and the selector/predictor are trained to fool it.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import LrSchedule
from .errors import ContractError, DimensionError, NumericError
from .text import PAD, Document, Vocab, encode_batch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    initial_lr: float = 0.001
    decay_factor: float = 0.01
    decay_every: int = 25
    lambda_sparsity: float = 2.0
    lambda_continuity: float = 0.2
    lambda_adv: float = 0.02
    lambda_lm: float = 0.1
    target_proportion: float = 0.3
    gumbel_temperature: float = 0.5
    lm_regularizer_enabled: bool = False
    hidden: int = 128
    batch_size: int = 32
    optimizer: str = "adam"
    freeze_embeddings: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_sparsity", "lambda_continuity", "lambda_adv", "lambda_lm"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if not 0 < self.target_proportion < 1:
            raise ContractError("target_proportion must be in (0, 1)")
        if self.gumbel_temperature <= 0:
            raise ContractError("gumbel_temperature must be > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ContractError("epochs, batch_size and hidden must be >= 1")

    @property
    def schedule(self):
        return LrSchedule(self.initial_lr, self.decay_factor, self.decay_every)


@dataclass
class Rationale:
    doc_id: str
    kept_positions: list
    mask: np.ndarray

    @property
    def proportion(self):
        return float(self.mask.mean()) if self.mask.size else 0.0

    @classmethod
    def from_mask(cls, doc_id, mask):
        mask = (np.asarray(mask) > 0.5).astype(np.float64)
        return cls(doc_id, [int(i) for i in np.flatnonzero(mask)], mask)


@dataclass
class InfoCalLosses:
    l_pred: float
    l_guide: float
    l_adv_d: float
    l_adv_s: float
    l_sparsity: float
    l_continuity: float
    l_lm: float
    total: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise NumericError(f"loss component {name} is not finite ({value})")


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; carries the last good model state."""

    def __init__(self, message, last_good_state, history):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.history = history


class BigramLM:
    """Add-one smoothed bigram model over training token sequences."""

    BOS = "<s>"

    def __init__(self, sequences: Sequence[Sequence[str]]):
        self.unigrams = Counter()
        self.bigrams = Counter()
        for seq in sequences:
            prev = self.BOS
            for tok in seq:
                self.unigrams[prev] += 1
                self.bigrams[(prev, tok)] += 1
                prev = tok
        self.vocab = {t for seq in sequences for t in seq} | {self.BOS}
        self.V = len(self.vocab) + 1            # +1 for unseen tokens

    def nll(self, prev, tok):
        return -math.log((self.bigrams[(prev, tok)] + 1) / (self.unigrams[prev] + self.V))

    def sequence_nll(self, tokens):
        prev, out = self.BOS, []
        for tok in tokens:
            out.append(self.nll(prev, tok))
            prev = tok
        return out


def lm_fluency_penalty(tokens: Sequence[str], lm: BigramLM) -> float:
    """Mean per-token negative log-likelihood of a rationale's token sequence."""
    if not tokens:
        return 0.0
    return float(np.mean(lm.sequence_nll(tokens)))


class InfoCalModel(nn.Module):
    def __init__(self, vocab: Vocab, embeddings: np.ndarray, hidden=128, seed=0,
                 freeze_embeddings=True):
        if embeddings.shape[0] != len(vocab):
            raise DimensionError(f"embedding rows {embeddings.shape[0]} != vocab size {len(vocab)}")
        rng = np.random.default_rng(seed)
        E = embeddings.shape[1]
        self.vocab = vocab
        self.hidden = hidden
        self.embedding = ad.Tensor(embeddings.copy(), requires_grad=not freeze_embeddings)
        self.selector = nn.BiGRU(rng, E, hidden)
        self.selector_head = nn.Linear(rng, 2 * hidden + E, 1)
        self.predictor = nn.GRU(rng, E, hidden)
        self.predictor_head = nn.Linear(rng, hidden, 1)
        self.guider = nn.GRU(rng, E, hidden)
        self.guider_head = nn.Linear(rng, hidden, 1)
        self.discriminator = nn.GRU(rng, hidden, hidden)
        self.discriminator_head = nn.Linear(rng, hidden, 1)

    GENERATOR = ("embedding", "selector", "selector_head", "predictor", "predictor_head",
                 "guider", "guider_head")

    def generator_parameters(self):
        return [p for k, p in self.named_parameters().items() if k.split(".")[0] in self.GENERATOR]

    def discriminator_parameters(self):
        return [p for k, p in self.named_parameters().items() if k.split(".")[0].startswith("discriminator")]

    # -- batched pieces ------------------------------------------------------

    def embed(self, ids):
        return ad.embedding(self.embedding, ids, padding_idx=PAD)

    def selector_logits(self, emb, pad):
        states = self.selector(emb, pad)
        both = ad.concat([states, emb], axis=2)
        B, T = pad.shape
        return ad.reshape(self.selector_head(both), (B, T))

    def encode(self, which, emb, pad):
        gru, head = (self.predictor, self.predictor_head) if which == "predictor" else (
            self.guider, self.guider_head)
        states = gru(emb, pad)
        prob = ad.sigmoid(ad.reshape(head(nn.last_state(states)), (emb.shape[0],)))
        return prob, states

    def discriminate(self, states, pad):
        if states.shape[-1] != self.hidden:
            raise DimensionError(f"discriminator expects width {self.hidden}, got {states.shape[-1]}")
        d_states = self.discriminator(states, pad)
        pooled = nn.masked_mean(d_states, pad)
        return ad.sigmoid(ad.reshape(self.discriminator_head(pooled), (states.shape[0],)))

    def masked_embeddings(self, emb, mask):
        return emb * ad.expand_last(mask, emb.shape[-1])


def _straight_through(logits, pad, temperature, rng):
    """Hard Bernoulli(sigmoid(logits)) sample forward, relaxed sigmoid backward."""
    u = rng.uniform(1e-12, 1.0 - 1e-12, size=logits.shape)
    noise = np.log(u) - np.log1p(-u)
    hard = ((logits.data + noise) > 0).astype(np.float64) * pad
    soft = ad.sigmoid(ad.scale(ad.add(logits, ad.constant(noise)), 1.0 / temperature))
    soft = soft * ad.constant(pad)
    return soft + ad.constant(hard - soft.data), hard


def sample_mask(p, temperature, mode="infer", rng=None, pad=None):
    """Binary keep mask from keep probabilities ``p``.

    ``mode="infer"`` thresholds at 0.5.  ``mode="train"`` draws a hard sample
    and also returns a differentiable surrogate tensor whose value equals the
    hard mask; its gradient is that of the tempered Gumbel sigmoid.
    """
    if temperature <= 0:
        raise ContractError("temperature must be > 0")
    pt = p if isinstance(p, ad.Tensor) else ad.constant(p)
    pad = np.ones(pt.shape) if pad is None else np.asarray(pad, dtype=np.float64)
    if mode == "infer":
        hard = (pt.data > 0.5).astype(np.float64) * pad
        return hard, ad.constant(hard)
    if mode != "train":
        raise ContractError(f"mode must be 'train' or 'infer', got {mode!r}")
    if rng is None:
        rng = np.random.default_rng()
    pc = ad.Tensor(np.clip(pt.data, 1e-12, 1 - 1e-12)) if not pt.requires_grad else pt
    logits = ad.sub(ad.log(pc), ad.log(1.0 - pc)) if pt.requires_grad else ad.constant(
        np.log(pc.data) - np.log1p(-pc.data))
    surrogate, hard = _straight_through(logits, pad, temperature, rng)
    return hard, surrogate


# ---------------------------------------------------------------------------
# per-document API


def _single(model, doc):
    if not doc.tokens:
        raise ContractError(f"{doc.doc_id}: empty document")
    ids, pad = encode_batch([doc], model.vocab)
    return ids, pad


def selector_forward(model: InfoCalModel, doc: Document, pad_to=None) -> np.ndarray:
    """Keep probability per position; positions past the document (padding) are 0."""
    ids, pad = _single(model, doc)
    if pad_to is not None and pad_to > ids.shape[1]:
        extra = pad_to - ids.shape[1]
        ids = np.pad(ids, ((0, 0), (0, extra)), constant_values=PAD)
        pad = np.pad(pad, ((0, 0), (0, extra)))
    with ad.no_grad():
        emb = model.embed(ids)
        p = ad.sigmoid(model.selector_logits(emb, pad)).data * pad
    return p[0]


def predictor_forward(model: InfoCalModel, doc: Document, mask) -> float:
    ids, pad = _single(model, doc)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (len(doc.tokens),):
        raise DimensionError(f"mask length {mask.shape} != document length {len(doc.tokens)}")
    with ad.no_grad():
        emb = model.masked_embeddings(model.embed(ids), ad.constant(mask[None, :]))
        prob, _ = model.encode("predictor", emb, pad)
    return float(prob.data[0])


def guider_forward(model: InfoCalModel, doc: Document) -> float:
    ids, pad = _single(model, doc)
    with ad.no_grad():
        prob, _ = model.encode("guider", model.embed(ids), pad)
    return float(prob.data[0])


def discriminator_forward(model: InfoCalModel, hidden_sequence, origin="selector-path") -> float:
    """Probability that ``hidden_sequence`` ``(T, H)`` came from the selector path.

    ``origin`` is informational (it is the label the discriminator is trained
    toward) and does not change the computation.
    """
    if origin not in ("selector-path", "guider-path"):
        raise ContractError(f"unknown origin {origin!r}")
    h = np.asarray(hidden_sequence, dtype=np.float64)
    if h.ndim != 2:
        raise DimensionError(f"hidden sequence must be (T, H), got {h.shape}")
    with ad.no_grad():
        out = model.discriminate(ad.constant(h[None]), np.ones((1, h.shape[0])))
    return float(out.data[0])


def extract_rationale(model: InfoCalModel, doc: Document) -> Rationale:
    p = selector_forward(model, doc)
    hard, _ = sample_mask(p, 1.0, "infer")
    return Rationale.from_mask(doc.doc_id, hard)


# ---------------------------------------------------------------------------
# losses and training


def _proportions(mask, pad):
    lengths = pad.sum(axis=1)
    per_doc = ad.sum_(mask * ad.constant(pad), axis=1)
    return ad.mul(per_doc, ad.constant(1.0 / lengths))


def sparsity_loss(mask, pad, target):
    """Mean over documents of |kept fraction - target|."""
    return ad.mean(ad.abs_(ad.shift(_proportions(mask, pad), -target)))


def continuity_loss(mask, pad):
    """Mean over documents of the mean |m_t - m_{t-1}| over adjacent real positions."""
    B, T = pad.shape
    if T < 2:
        return ad.constant(0.0)
    diff = ad.abs_(ad.sub(mask[:, 1:], mask[:, :T - 1]))
    both = pad[:, 1:] * pad[:, :-1]
    n = np.maximum(both.sum(axis=1), 1.0)
    per_doc = ad.sum_(diff * ad.constant(both / n[:, None]), axis=1)
    return ad.mean(per_doc)


def lm_surrogate_loss(mask, ids, pad, model_vocab, lm: BigramLM):
    """Differentiable proxy of the fluency penalty: kept-token bigram NLL weighted by the mask."""
    B, T = ids.shape
    nll = np.zeros((B, T))
    for b in range(B):
        toks = model_vocab.decode(ids[b, :int(pad[b].sum())])
        nll[b, :len(toks)] = lm.sequence_nll(toks)
    kept = np.maximum(mask.data.sum(axis=1), 1.0)
    return ad.mean(ad.sum_(mask * ad.constant(nll / kept[:, None]), axis=1))


@dataclass
class _Forward:
    ids: np.ndarray
    pad: np.ndarray
    y: np.ndarray
    logits: ad.Tensor
    mask: ad.Tensor
    hard: np.ndarray
    y_pred: ad.Tensor
    y_guide: ad.Tensor
    pred_states: ad.Tensor
    guide_states: ad.Tensor


def _forward(model, docs, config, rng, mode):
    ids, pad = encode_batch(docs, model.vocab)
    y = np.array([d.label for d in docs], dtype=np.float64)
    emb = model.embed(ids)
    logits = model.selector_logits(emb, pad)
    if mode == "train":
        mask, hard = _straight_through(logits, pad, config.gumbel_temperature, rng)
    else:
        hard = (logits.data > 0).astype(np.float64) * pad
        mask = ad.constant(hard)
    y_pred, pred_states = model.encode("predictor", model.masked_embeddings(emb, mask), pad)
    y_guide, guide_states = model.encode("guider", emb, pad)
    return _Forward(ids, pad, y, logits, mask, hard, y_pred, y_guide, pred_states, guide_states)


def _disc_loss(model, fw):
    sel = model.discriminate(ad.constant(fw.pred_states.data), fw.pad)
    gui = model.discriminate(ad.constant(fw.guide_states.data), fw.pad)
    B = len(fw.y)
    loss = ad.scale(ad.add(ad.bce_loss(sel, np.ones(B)), ad.bce_loss(gui, np.zeros(B))), 0.5)
    return loss, sel.data, gui.data


def infocal_loss(model: InfoCalModel, docs: Sequence[Document], config: TrainConfig, rng=None,
                 lm: Optional[BigramLM] = None, mode="train"):
    """Loss components for one batch; returns ``(InfoCalLosses, total tensor, disc tensor)``."""
    if not docs:
        raise ContractError("batch is empty")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    fw = _forward(model, docs, config, rng, mode)
    return _losses(model, fw, config, lm)


def _losses(model, fw, config, lm, l_adv_d=None):
    B = len(fw.y)
    l_pred = ad.bce_loss(fw.y_pred, fw.y)
    l_guide = ad.bce_loss(fw.y_guide, fw.y)
    l_sp = sparsity_loss(fw.mask, fw.pad, config.target_proportion)
    l_ct = continuity_loss(fw.mask, fw.pad)
    l_adv_s = ad.bce_loss(model.discriminate(fw.pred_states, fw.pad), np.zeros(B))
    if l_adv_d is None:
        l_adv_d = _disc_loss(model, fw)[0].item()
    total = (l_pred + l_guide + l_sp * config.lambda_sparsity + l_ct * config.lambda_continuity
             + l_adv_s * config.lambda_adv)
    l_lm = ad.constant(0.0)
    if config.lm_regularizer_enabled:
        if lm is None:
            raise ContractError("lm_regularizer_enabled needs a BigramLM")
        l_lm = lm_surrogate_loss(fw.mask, fw.ids, fw.pad, model.vocab, lm)
        total = total + l_lm * config.lambda_lm
    comps = InfoCalLosses(l_pred.item(), l_guide.item(), float(l_adv_d), l_adv_s.item(),
                          l_sp.item(), l_ct.item(), l_lm.item(), total.item())
    return comps, total, l_adv_d


def _batches(docs, batch_size, rng=None):
    order = np.arange(len(docs)) if rng is None else rng.permutation(len(docs))
    for start in range(0, len(docs), batch_size):
        yield [docs[i] for i in order[start:start + batch_size]]


def predict_batch(model, docs, batch_size=256):
    """Inference-mode predictor probs, guider probs, hard masks, predictor states."""
    out = {"pred": [], "guide": [], "masks": [], "disc_sel": [], "disc_gui": []}
    cfg = TrainConfig(epochs=1)
    with ad.no_grad():
        for batch in _batches(docs, batch_size):
            fw = _forward(model, batch, cfg, None, "infer")
            out["pred"].append(fw.y_pred.data)
            out["guide"].append(fw.y_guide.data)
            out["disc_sel"].append(model.discriminate(fw.pred_states, fw.pad).data)
            out["disc_gui"].append(model.discriminate(fw.guide_states, fw.pad).data)
            for b, d in enumerate(batch):
                out["masks"].append(fw.hard[b, :len(d.tokens)].copy())
    return {k: (v if k == "masks" else np.concatenate(v)) for k, v in out.items()}


def evaluate(model, docs):
    from .metrics import rationale_recovery, roc_auc_or_nan

    res = predict_batch(model, docs)
    y = np.array([d.label for d in docs], dtype=np.float64)
    pc = np.clip(res["pred"], 1e-7, 1 - 1e-7)
    l_pred = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
    disc_acc = float(np.concatenate([res["disc_sel"] > 0.5, res["disc_gui"] <= 0.5]).mean())
    rec = rationale_recovery(res["masks"], docs)
    pos = y == 1
    props = np.array([m.mean() for m in res["masks"]])
    return {
        "val_l_pred": l_pred,
        "val_auc": roc_auc_or_nan(res["pred"], y),
        "val_guider_auc": roc_auc_or_nan(res["guide"], y),
        "val_proportion": float(np.mean([m.mean() for m in res["masks"]])),
        "val_disc_acc": disc_acc,
        "val_proportion_pos": float(props[pos].mean()) if pos.any() else float("nan"),
        "val_proportion_neg": float(props[~pos].mean()) if (~pos).any() else float("nan"),
        "val_rationale_precision": rec["precision"] if rec else float("nan"),
        "val_rationale_recall": rec["recall"] if rec else float("nan"),
        "val_rationale_f1": rec["f1"] if rec else float("nan"),
    }


@dataclass
class History:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [r[name] for r in self.rows]


def train_infocal(train_docs: Sequence[Document], val_docs: Sequence[Document], vocab: Vocab,
                  embeddings: np.ndarray, config: TrainConfig, lm: Optional[BigramLM] = None,
                  progress=None):
    """Alternating discriminator / generator updates for ``config.epochs`` epochs.

    Returns ``(model, history)``; history has one row per epoch with the lr,
    mean training loss components and validation metrics.
    """
    if config.lm_regularizer_enabled and lm is None:
        lm = BigramLM([d.tokens for d in train_docs])
    model = InfoCalModel(vocab, embeddings, config.hidden, config.seed, config.freeze_embeddings)
    schedule = config.schedule
    rng = np.random.default_rng(config.seed + 1)
    gen_opt = ad.make_optimizer(config.optimizer, model.generator_parameters())
    disc_opt = ad.make_optimizer(config.optimizer, model.discriminator_parameters())
    history = History()
    last_good = {k: v.copy() for k, v in model.state().items()}
    for epoch in range(config.epochs):
        lr = schedule.lr(epoch)
        sums = Counter()
        n_batches = 0
        try:
            for batch in _batches(train_docs, config.batch_size, rng):
                fw = _forward(model, batch, config, rng, "train")
                disc_opt.zero_grad()
                l_d, _, _ = _disc_loss(model, fw)
                ad.backward(l_d)
                disc_opt.step(lr)

                gen_opt.zero_grad()
                comps, total, _ = _losses(model, fw, config, lm, l_d.item())
                ad.backward(total)
                gen_opt.step(lr)
                for k, v in asdict(comps).items():
                    sums[k] += v
                n_batches += 1
        except NumericError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good, history) from exc
        row = {"epoch": epoch, "lr": lr}
        row.update({k: sums[k] / n_batches for k in asdict(comps)})
        if val_docs:
            row.update(evaluate(model, val_docs))
        history.rows.append(row)
        last_good = {k: v.copy() for k, v in model.state().items()}
        if progress:
            progress(row)
        log.info("epoch %d lr %.2e total %.4f val_auc %s", epoch, lr, row["total"], row.get("val_auc"))
    return model, history
