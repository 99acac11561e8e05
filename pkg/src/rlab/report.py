"""Highlighted-token renderings and side-by-side comparison of explanation methods."""
from __future__ import annotations

import html
import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError

HIGHLIGHT_STYLE = "background-color:#9cc3ff;border-radius:2px"
ANSI_ON, ANSI_OFF = "\x1b[44;97m", "\x1b[0m"
TOP_K_FRACTION = 0.15
METHODS = ("rationale", "attention", "lrp")


def default_top_k(n_tokens, fraction=TOP_K_FRACTION):
    return math.ceil(fraction * n_tokens)


def select_highlights(n_tokens, scores=None, mask=None, threshold=None, top_k=None):
    """Indices to highlight: ``mask == 1``, ``score > threshold``, or the top-k scores."""
    if (scores is None) == (mask is None):
        raise ContractError("give exactly one of scores or mask")
    vals = np.asarray(mask if mask is not None else scores, dtype=np.float64).reshape(-1)
    if vals.size != n_tokens:
        raise ContractError(f"{vals.size} scores/mask entries for {n_tokens} tokens")
    if mask is not None:
        return set(np.nonzero(vals > 0.5)[0].tolist())
    if threshold is not None:
        return set(np.nonzero(vals > threshold)[0].tolist())
    k = default_top_k(n_tokens) if top_k is None else int(top_k)
    order = np.argsort(-vals, kind="mergesort")
    return set(order[:k].tolist())


def _tokens(doc):
    return list(doc.tokens) if hasattr(doc, "tokens") else list(doc)


def render_highlight_report(doc, scores=None, mask=None, threshold=None, top_k=None, fmt="html"):
    """Render ``doc`` (a Document or token list) with selected tokens highlighted.

    HTML output is a single ``<div>`` with inline styles; ANSI output uses a
    blue background escape.  Stripping the markup gives the tokens joined by
    single spaces.
    """
    tokens = _tokens(doc)
    chosen = select_highlights(len(tokens), scores, mask, threshold, top_k)
    if fmt == "html":
        parts = [f'<span style="{HIGHLIGHT_STYLE}">{html.escape(t)}</span>' if i in chosen
                 else html.escape(t) for i, t in enumerate(tokens)]
        return '<div style="font-family:monospace;line-height:1.8">' + " ".join(parts) + "</div>"
    if fmt == "ansi":
        return " ".join(f"{ANSI_ON}{t}{ANSI_OFF}" if i in chosen else t for i, t in enumerate(tokens))
    raise ContractError(f"unknown format {fmt!r}; expected html or ansi")


_TAG = re.compile(r"<[^>]+>")
_ESC = re.compile(r"\x1b\[[0-9;]*m")


def strip_markup(text, fmt="html"):
    if fmt == "html":
        return html.unescape(_TAG.sub("", text))
    return _ESC.sub("", text)


def highlighted_tokens(text, fmt="html"):
    """Token positions that carry highlight markup in a rendered report."""
    if fmt == "html":
        body = _TAG.sub(lambda m: "\x00" if m.group(0).startswith("<span") else "", text)
        words = body.split(" ")
        return {i for i, w in enumerate(words) if w.startswith("\x00")}
    words = text.split(" ")
    return {i for i, w in enumerate(words) if w.startswith(ANSI_ON)}


def jaccard(a, b):
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass
class MethodRow:
    method: str
    highlights: set
    rendered: str

    def words(self, tokens):
        return [tokens[i] for i in sorted(self.highlights)]


@dataclass
class Comparison:
    doc_id: str
    tokens: list
    rows: list = field(default_factory=list)
    jaccard: dict = field(default_factory=dict)
    notices: list = field(default_factory=list)

    def to_html(self):
        lines = ['<table style="border-collapse:collapse;font-family:sans-serif">',
                 f'<tr><th colspan="2" style="text-align:left;padding:4px">{html.escape(self.doc_id)}</th></tr>']
        for r in self.rows:
            lines.append(f'<tr><td style="padding:4px;vertical-align:top"><b>{r.method}</b></td>'
                         f'<td style="padding:4px">{r.rendered}</td></tr>')
        lines.append("</table>")
        if self.jaccard:
            lines.append("<ul>" + "".join(f"<li>Jaccard {a} / {b}: {v:.3f}</li>"
                                          for (a, b), v in self.jaccard.items()) + "</ul>")
        lines.extend(f"<p><i>{html.escape(n)}</i></p>" for n in self.notices)
        return "\n".join(lines)

    def to_text(self):
        out = [self.doc_id]
        out += [f"{r.method:>10}: {r.rendered}" for r in self.rows]
        out += [f"jaccard {a}/{b} = {v:.3f}" for (a, b), v in self.jaccard.items()]
        out += self.notices
        return "\n".join(out)


def compare_methods(doc, outputs: dict, fmt="html", top_k=None) -> Comparison:
    """One row per method present in ``outputs`` plus pairwise Jaccard of highlighted sets.

    Each output is a dict with either ``kept_positions`` (rationales) or
    ``scores`` (attention, LRP).  Absent methods are skipped with a notice.
    """
    tokens = _tokens(doc)
    doc_id = getattr(doc, "doc_id", "")
    cmp = Comparison(doc_id, tokens)
    for method in METHODS:
        rec = outputs.get(method)
        if rec is None:
            cmp.notices.append(f"{method}: no explanation for {doc_id}, row omitted")
            continue
        if rec.get("doc_id", doc_id) != doc_id:
            raise ContractError(f"{method} explanation is for {rec['doc_id']}, not {doc_id}")
        if "kept_positions" in rec:
            mask = np.zeros(len(tokens))
            mask[list(rec["kept_positions"])] = 1.0
            chosen = select_highlights(len(tokens), mask=mask)
            rendered = render_highlight_report(tokens, mask=mask, fmt=fmt)
        else:
            chosen = select_highlights(len(tokens), scores=rec["scores"], top_k=top_k)
            rendered = render_highlight_report(tokens, scores=rec["scores"], top_k=top_k, fmt=fmt)
        cmp.rows.append(MethodRow(method, chosen, rendered))
    for i, a in enumerate(cmp.rows):
        for b in cmp.rows[i + 1:]:
            cmp.jaccard[(a.method, b.method)] = jaccard(a.highlights, b.highlights)
    return cmp


def read_explanations(path) -> dict:
    """JSONL explanation dump keyed by doc_id."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["doc_id"]] = rec
    return out


def write_jsonl(path, records: Sequence[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
