"""Synthetic discharge-note corpora with planted, known rationales.

A document is positive exactly when it contains a run of at least two
consecutive signal tokens.  Positives get one contiguous planted span of
signal tokens; a negative carries at most one isolated signal token (with
probability ``noise_rate``), so the rule stays exact while single signal
words are not sufficient evidence.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .cohort import CohortDataset
from .errors import ContractError
from .text import Document

SIGNAL_WORDS = (
    "warfarin", "overload", "sepsis", "diastolic", "failure", "pressure", "dyspnea",
    "edema", "creatinine", "hypotension", "arrhythmia", "pneumonia", "furosemide",
    "hypoxia", "tachycardia", "ascites", "anemia", "delirium", "dialysis", "syncope",
)

FILLER_WORDS = (
    "patient", "was", "the", "and", "with", "of", "to", "in", "on", "for", "admitted",
    "history", "noted", "given", "stable", "daily", "home", "discharged", "follow", "up",
    "plan", "seen", "by", "team", "his", "her", "at", "after", "prior", "started", "exam",
    "normal", "review", "reports", "denies", "today", "continue", "mg", "dose", "level",
)


@dataclass(frozen=True)
class SynthConfig:
    n_docs: int = 2000
    vocab_size: int = 500
    doc_len: tuple = (16, 24)
    rationale_len: tuple = (4, 7)
    positive_rate: float = 0.3
    noise_rate: float = 0.05
    n_signal: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.positive_rate < 1:
            raise ContractError("positive_rate must be in (0, 1)")
        if not 0 <= self.noise_rate < 0.5:
            raise ContractError("noise_rate must be in [0, 0.5)")
        if self.n_docs < 1 or self.n_signal < 1:
            raise ContractError("n_docs and n_signal must be >= 1")
        if self.vocab_size < 2 * self.n_signal:
            raise ContractError(f"vocab_size {self.vocab_size} < 2 x signal vocabulary {self.n_signal}")
        lo, hi = self.doc_len
        rlo, rhi = self.rationale_len
        if not 1 <= lo <= hi or not 2 <= rlo <= rhi or rhi > lo:
            raise ContractError("need 1 <= doc_len[0] <= doc_len[1], 2 <= rationale_len[0] "
                                "<= rationale_len[1] <= doc_len[0]")

    def to_dict(self):
        d = asdict(self)
        d["doc_len"] = list(self.doc_len)
        d["rationale_len"] = list(self.rationale_len)
        return d


def signal_vocabulary(n_signal):
    words = list(SIGNAL_WORDS[:n_signal])
    words += [f"sig{i:03d}" for i in range(len(words), n_signal)]
    return words


def background_vocabulary(n):
    words = list(FILLER_WORDS[:n])
    words += [f"w{i:04d}" for i in range(len(words), n)]
    return words


def has_signal_run(tokens, signal, min_run=2):
    """The labeling rule: a run of ``min_run`` consecutive signal tokens."""
    run = 0
    for t in tokens:
        run = run + 1 if t in signal else 0
        if run >= min_run:
            return True
    return False


def generate_synthetic_corpus(config: SynthConfig) -> CohortDataset:
    rng = np.random.default_rng(config.seed)
    signal = signal_vocabulary(config.n_signal)
    background = background_vocabulary(config.vocab_size - config.n_signal)
    weights = 1.0 / (np.arange(len(background)) + 20.0)
    weights /= weights.sum()

    n_pos = int(round(config.positive_rate * config.n_docs))
    labels = np.zeros(config.n_docs, dtype=int)
    labels[:n_pos] = 1
    labels = labels[rng.permutation(config.n_docs)]

    docs = []
    for i, label in enumerate(labels):
        length = int(rng.integers(config.doc_len[0], config.doc_len[1] + 1))
        toks = [background[j] for j in rng.choice(len(background), size=length, p=weights)]
        planted = []
        if label:
            k = int(rng.integers(config.rationale_len[0], config.rationale_len[1] + 1))
            start = int(rng.integers(0, length - k + 1))
            for pos in range(start, start + k):
                toks[pos] = signal[int(rng.integers(len(signal)))]
            planted = list(range(start, start + k))
        elif rng.random() < config.noise_rate:
            toks[int(rng.integers(length))] = signal[int(rng.integers(len(signal)))]
        doc_id = f"syn{i:05d}"
        docs.append(Document(doc_id, tuple(toks), int(label), " ".join(toks), frozenset(planted)))
    ds = CohortDataset(docs, {d.doc_id: d.doc_id for d in docs})
    n_patients, pos, neg = ds.counts
    ds.summary = {"n_docs": len(docs), "n_positive": pos, "n_negative": neg,
                  "n_signal_tokens": len(signal), "config": config.to_dict()}
    return ds
