"""Binary classification metrics and rationale statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError

GROUPS = ("TP", "FP", "TN", "FN")
N_BINS = 20


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(int)
    if s.shape != y.shape:
        raise ContractError(f"{s.size} scores vs {y.size} labels")
    if not set(np.unique(y)) <= {0, 1}:
        raise ContractError("labels must be 0/1")
    return s, y


def _average_ranks(s):
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels):
    """Mann-Whitney AUC; tied positive/negative pairs get half credit."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes present")
    ranks = _average_ranks(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auc_or_nan(scores, labels):
    try:
        return roc_auc(scores, labels)
    except UndefinedMetricError:
        return float("nan")


def _sweep(s, y):
    """(tp, fp) counts when predicting positive for score >= t, t over distinct scores desc."""
    order = np.argsort(-s, kind="mergesort")
    ss, yy = s[order], y[order]
    tp = np.cumsum(yy)
    fp = np.cumsum(1 - yy)
    last = np.r_[ss[1:] != ss[:-1], True]
    return tp[last], fp[last]


def auprc(scores, labels):
    """Average precision: sum over thresholds of (recall step) x precision."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    tp, fp = _sweep(s, y)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def recall_at_precision(scores, labels, min_precision=0.8):
    """Largest recall over thresholds whose precision is at least ``min_precision``; 0 if none."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("recall needs at least one positive")
    tp, fp = _sweep(s, y)
    if min_precision == 0.8:
        ok = 5 * tp >= 4 * (tp + fp)          # exact integer form of tp/(tp+fp) >= 0.8
    else:
        ok = tp >= min_precision * (tp + fp)
    return float(tp[ok].max() / n_pos) if ok.any() else 0.0


def recall_at_precision80(scores, labels):
    return recall_at_precision(scores, labels, 0.8)


def f1_macro(predictions, labels):
    p, y = _check(predictions, labels)
    p = p.astype(int)
    f1s = []
    for c in (0, 1):
        tp = int(np.sum((p == c) & (y == c)))
        fp = int(np.sum((p == c) & (y != c)))
        fn = int(np.sum((p != c) & (y == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


@dataclass
class MetricsReport:
    auc: float
    auprc: float
    r80: float
    f1_macro: float
    n_samples: int
    threshold: float = 0.5

    def __post_init__(self):
        for name in ("auc", "auprc", "r80", "f1_macro"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name}={v} outside [0, 1]")

    def to_dict(self, config=None):
        d = {k: v for k, v in asdict(self).items() if k != "threshold"}
        d["config"] = dict(config or {}, threshold=self.threshold)
        return d


def evaluate_scores(scores, labels, threshold=0.5) -> MetricsReport:
    s, y = _check(scores, labels)
    return MetricsReport(
        auc=roc_auc(s, y),
        auprc=auprc(s, y),
        r80=recall_at_precision80(s, y),
        f1_macro=f1_macro((s >= threshold).astype(int), y),
        n_samples=len(y),
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# rationales


def recovery(pred_masks, planted_masks):
    """Micro-averaged positional precision / recall / F1 of kept positions."""
    tp = kept = planted = 0
    for m, g in zip(pred_masks, planted_masks):
        m = np.asarray(m) > 0.5
        g = np.asarray(g) > 0.5
        if m.shape != g.shape:
            raise ContractError(f"mask length {m.shape} != planted length {g.shape}")
        tp += int(np.sum(m & g))
        kept += int(m.sum())
        planted += int(g.sum())
    precision = tp / kept if kept else 0.0
    recall = tp / planted if planted else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1, "n_kept": kept, "n_planted": planted}


def rationale_recovery(masks, docs):
    """Recovery over documents whose planted rationale is non-empty; None if there are none."""
    pairs = [(m, d.planted_mask()) for m, d in zip(masks, docs) if d.planted_rationale]
    if not pairs:
        return None
    return recovery(*zip(*pairs))


def decision_group(pred, label):
    return {(1, 1): "TP", (1, 0): "FP", (0, 0): "TN", (0, 1): "FN"}[(int(pred), int(label))]


@dataclass
class RationaleStats:
    proportions: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    bin_edges: np.ndarray = None
    recovery: dict = None

    @property
    def n_samples(self):
        return sum(len(v) for v in self.proportions.values())


def rationale_stats(rationales, predictions: dict, labels: dict, planted: dict = None,
                    threshold=0.5) -> RationaleStats:
    """Bucket rationale proportions by TP/FP/TN/FN and score recovery against planted masks.

    ``predictions`` maps doc_id to a probability, ``labels`` and the optional
    ``planted`` (doc_id -> set of positions) are keyed the same way.
    """
    ids = [r.doc_id for r in rationales]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate doc_id among rationales")
    if set(ids) != set(predictions) or set(ids) != set(labels):
        raise ContractError("rationales, predictions and labels are not aligned by doc_id")
    props = {g: [] for g in GROUPS}
    for r in rationales:
        pred = int(predictions[r.doc_id] >= threshold)
        props[decision_group(pred, labels[r.doc_id])].append(r.proportion)
    edges = np.linspace(0.0, 1.0, N_BINS + 1)
    hists = {g: np.histogram(v, bins=edges)[0] for g, v in props.items()}
    rec = None
    if planted is not None:
        if set(planted) != set(ids):
            raise ContractError("planted rationales are not aligned by doc_id")
        pairs = []
        for r in rationales:
            if planted[r.doc_id]:
                g = np.zeros(len(r.mask))
                g[sorted(planted[r.doc_id])] = 1.0
                pairs.append((r.mask, g))
        rec = recovery(*zip(*pairs)) if pairs else None
    return RationaleStats(props, hists, edges, rec)


def write_histogram_csv(path, stats: RationaleStats):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "bin_low", "bin_high", "count"])
        for g in GROUPS:
            for i, c in enumerate(stats.histograms[g]):
                w.writerow([g, f"{stats.bin_edges[i]:.2f}", f"{stats.bin_edges[i + 1]:.2f}", int(c)])


def nan_to_none(d):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}
