"""Tokenization, vocabularies, bag-of-words features and corpus files."""
from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, ParseError

PAD, UNK, CLS = 0, 1, 2
SPECIAL_TOKENS = ("<pad>", "<unk>", "<cls>")
MAX_SEQ_LEN = 128

_PUNCT = string.punctuation
_NUMERIC = re.compile(r"[^\w+-]*([+-]?\d+(?:\.\d+)?)[^\w]*")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation; numbers kept as written."""
    out = []
    for raw in text.lower().split():
        m = _NUMERIC.fullmatch(raw)
        tok = m.group(1) if m else raw.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple
    label: int
    raw_text: str = ""
    planted_rationale: Optional[frozenset] = None
    patient_id: Optional[str] = None
    split: Optional[str] = None

    def __post_init__(self):
        if not self.tokens:
            raise ContractError(f"{self.doc_id}: document has no tokens")
        if self.label not in (0, 1):
            raise ContractError(f"{self.doc_id}: label must be 0 or 1, got {self.label!r}")
        if self.planted_rationale is not None and any(
                not 0 <= i < len(self.tokens) for i in self.planted_rationale):
            raise ContractError(f"{self.doc_id}: planted rationale position out of range")

    @classmethod
    def from_text(cls, doc_id, text, label, planted_rationale=None, patient_id=None,
                  max_seq_len=MAX_SEQ_LEN):
        toks = tokenize(text)[:max_seq_len]
        planted = None
        if planted_rationale is not None:
            planted = frozenset(int(i) for i in planted_rationale if int(i) < len(toks))
        return cls(str(doc_id), tuple(toks), int(label), text, planted, patient_id)

    @property
    def patient(self):
        return self.patient_id if self.patient_id is not None else self.doc_id

    def with_split(self, split):
        return replace(self, split=split)

    def planted_mask(self):
        m = np.zeros(len(self.tokens))
        if self.planted_rationale:
            m[sorted(self.planted_rationale)] = 1.0
        return m


class Vocab:
    """Token <-> id map.  Ids 0-2 are reserved for PAD, UNK and CLS."""

    def __init__(self, tokens: Sequence[str], counts: Optional[dict] = None):
        self.itos = list(SPECIAL_TOKENS) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate tokens in vocabulary")
        self.counts = dict(counts or {})

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi and self.stoi[token] > CLS

    def id(self, token):
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def retained(self):
        return self.itos[len(SPECIAL_TOKENS):]


def build_vocab(corpus: Sequence[Document], min_count: int = 1) -> Vocab:
    """Retain tokens seen at least ``min_count`` times, ordered by count desc then text."""
    if min_count < 1:
        raise ContractError("min_count must be >= 1")
    if not corpus:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    leaked = [d.doc_id for d in corpus if d.split not in (None, "train")]
    if leaked:
        raise ContractError(f"vocabulary must be built from training documents only; "
                            f"{len(leaked)} documents are tagged val/test (e.g. {leaked[0]})")
    counts = Counter(t for d in corpus for t in d.tokens)
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(kept, {t: counts[t] for t in kept})


def bow_vectorize(doc: Document, vocab: Vocab) -> dict[int, int]:
    """Sparse token counts keyed by vocab id; UNK and special ids are not features."""
    ids = vocab.encode(doc.tokens)
    return dict(sorted(Counter(i for i in ids if i > CLS).items()))


def bow_matrix(docs: Sequence[Document], vocab: Vocab) -> np.ndarray:
    X = np.zeros((len(docs), len(vocab)))
    for row, doc in enumerate(docs):
        for i, c in bow_vectorize(doc, vocab).items():
            X[row, i] = c
    return X


def encode_batch(docs: Sequence[Document], vocab: Vocab, prepend_cls=False):
    """Right-padded id matrix ``(B, T)`` and a 0/1 mask of real positions."""
    offset = 1 if prepend_cls else 0
    T = max(len(d.tokens) for d in docs) + offset
    ids = np.full((len(docs), T), PAD, dtype=np.int64)
    mask = np.zeros((len(docs), T))
    for b, d in enumerate(docs):
        row = vocab.encode(d.tokens)
        if prepend_cls:
            row = [CLS] + row
        ids[b, :len(row)] = row
        mask[b, :len(row)] = 1.0
    return ids, mask


# ---------------------------------------------------------------------------
# files


def document_record(doc: Document) -> dict:
    rec = {"doc_id": doc.doc_id, "text": doc.raw_text or " ".join(doc.tokens), "label": doc.label}
    if doc.planted_rationale is not None:
        rec["planted_rationale"] = sorted(doc.planted_rationale)
    if doc.patient_id is not None:
        rec["patient_id"] = doc.patient_id
    return rec


def write_corpus(path, docs: Iterable[Document]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(json.dumps(document_record(doc), ensure_ascii=False) + "\n")


def read_corpus(path, max_seq_len=MAX_SEQ_LEN) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append(Document.from_text(rec["doc_id"], rec["text"], rec["label"],
                                               rec.get("planted_rationale"), rec.get("patient_id"),
                                               max_seq_len=max_seq_len))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}: bad corpus record ({exc})", line=lineno) from exc
            except ContractError as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from exc
    if not docs:
        raise ParseError(f"{path}: corpus is empty")
    return docs


def write_embeddings(path, vocab: Vocab, matrix: np.ndarray):
    lines = [f"dim={matrix.shape[1]}"]
    for tok, row in zip(vocab.itos, matrix):
        lines.append(tok + " " + " ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_embeddings(path):
    """Return ``(tokens, matrix)`` in file order."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise ParseError(f"{path}: missing 'dim=<d>' header", line=1)
    dim = int(lines[0][4:])
    tokens, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise ParseError(f"expected {dim} values, got {len(parts) - 1}", line=lineno)
        tokens.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    return tokens, np.array(rows, dtype=np.float64).reshape(len(rows), dim)
