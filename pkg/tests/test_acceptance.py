"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line."""
import csv
import json
import math

import numpy as np

from rlab import cli, gradcheck
from rlab.cohort import build_cohort, load_admissions
from rlab.infocal import extract_rationale, predict_batch
from rlab.lrp import lrp_mlp
from rlab.metrics import (auprc, f1_macro, rationale_recovery, rationale_stats,
                          recall_at_precision80, roc_auc, write_histogram_csv)
from rlab.synth import signal_vocabulary
from rlab.text import write_corpus
from rlab.transformer import (attention, attention_importance, lrp_relevance, predict_proba,
                              transformer_forward)

from oracles import (brute_auc, brute_auprc, brute_f1_macro, brute_r80, straight_line_lrp)


# 1 -------------------------------------------------------------------------


def test_criterion_01_gradcheck(criterion):
    report = gradcheck.gradcheck_all_ops(seed=0)
    ok = report.max_rel_error < 1e-4 and report.seconds < 30 and report.n_points == 3
    criterion(1, ok, f"max rel error {report.max_rel_error:.2e} over {len(report.per_op)} op kinds, "
                     f"{report.n_points} points each, {report.seconds:.2f} s")
    assert ok


# 2 -------------------------------------------------------------------------


def _fixture(rng):
    n = int(rng.integers(2, 201))
    y = rng.integers(0, 2, size=n)
    y[rng.integers(n)] = 1
    y[rng.integers(n)] = 0
    if y.min() == y.max():
        y[0] = 1 - y[0]
    if rng.random() < 0.5:
        s = rng.integers(0, 8, size=n).astype(float)      # many ties
    else:
        s = rng.random(n)
    return s, y


def test_criterion_02_metric_oracles(criterion):
    rng = np.random.default_rng(2024)
    worst = {"auc": 0.0, "auprc": 0.0, "r80": 0.0, "f1": 0.0}
    for _ in range(1000):
        s, y = _fixture(rng)
        worst["auc"] = max(worst["auc"], abs(roc_auc(s, y) - brute_auc(s, y)))
        worst["auprc"] = max(worst["auprc"], abs(auprc(s, y) - brute_auprc(s, y)))
        worst["r80"] = max(worst["r80"], abs(recall_at_precision80(s, y) - brute_r80(s, y)))
        pred = (s >= np.median(s)).astype(int)
        worst["f1"] = max(worst["f1"], abs(f1_macro(pred, y) - brute_f1_macro(pred, y)))
    ok = all(v < 1e-12 for v in worst.values())
    criterion(2, ok, "1000 fixtures, max |diff| " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert ok


# 3 -------------------------------------------------------------------------


def _random_mlp(rng, positive, with_bias):
    widths = [int(rng.integers(2, 9)) for _ in range(int(rng.integers(2, 5)))] + [1]
    ws, bs = [], []
    for a, b in zip(widths[:-1], widths[1:]):
        w = rng.normal(size=(a, b))
        ws.append(np.abs(w) if positive else w)
        bs.append(rng.normal(size=b) if with_bias else None)
    x = rng.random(widths[0]) + 0.1 if positive else rng.normal(size=widths[0])
    return ws, bs, x


def test_criterion_03_lrp_conservation(criterion):
    rng = np.random.default_rng(3)
    worst_cons = 0.0
    for _ in range(100):
        ws, bs, x = _random_mlp(rng, positive=True, with_bias=False)
        rel = lrp_mlp(ws, bs, x, eps=0.0)
        worst_cons = max(worst_cons, abs(rel.input_relevance.sum() - rel.output_relevance))
    leak_identical = True
    worst_oracle = 0.0
    for _ in range(100):
        ws, bs, x = _random_mlp(rng, positive=False, with_bias=True)
        rel = lrp_mlp(ws, bs, x, eps=1e-6)
        leak_identical &= rel.leakage == rel.output_relevance - float(rel.input_relevance.sum())
        oracle = straight_line_lrp(ws, bs, x, 1e-6)
        worst_oracle = max(worst_oracle, max(abs(a - b) for a, b in zip(rel.layer_sums, oracle)))
    ok = worst_cons < 1e-9 and leak_identical and worst_oracle < 1e-8
    criterion(3, ok, f"bias-free eps=0 max |sum R_in - R_out| {worst_cons:.1e}; leakage identity "
                     f"{'exact' if leak_identical else 'broken'}; per-layer vs oracle {worst_oracle:.1e}")
    assert ok


# 4 -------------------------------------------------------------------------


def test_criterion_04_attention(criterion):
    out, w = attention([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0], [0.0]], 2)
    expected = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1.0)
    hand_ok = abs(w[0, 0] - 0.6698) < 1e-4 and abs(out[0, 0] - expected) < 1e-12
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(200):
        n, m, d = (int(v) for v in rng.integers(1, 12, size=3))
        _, w_r = attention(rng.normal(size=(n, d)) * 5, rng.normal(size=(m, d)) * 5,
                           rng.normal(size=(m, 3)), d)
        worst = max(worst, np.abs(w_r.sum(axis=1) - 1).max())
    ok = hand_ok and worst < 1e-9
    criterion(4, ok, f"2x2 weight {w[0, 0]:.6f} (expected 0.6698), max row-sum error {worst:.1e}")
    assert ok


# 5 -------------------------------------------------------------------------

EXPECTED_LABELS = {
    "P01@2100-01-01T08:00:00": 1,   # next EMERGENCY 29 days after discharge
    "P01@2100-02-03T08:00:00": 0,
    "P02@2100-03-01T12:00:00": 0,   # 31 days
    "P02@2100-04-04T12:00:00": 0,
    "P03@2100-05-01T09:00:00": 1,   # ELECTIVE at day 10 skipped, EMERGENCY at day 20
    "P03@2100-05-13T09:00:00": 1,   # the ELECTIVE stay itself: EMERGENCY 9 days later
    "P03@2100-05-23T09:00:00": 0,
    "P04@2100-06-01T07:30:00": 0,   # only an ELECTIVE follows
    "P04@2100-06-10T07:30:00": 0,
    "P05@2100-07-01T10:00:00": 0,   # the only follow-up ended in death and is dropped
    "P06@2100-08-20T03:00:00": 0,   # NEWBORN stay dropped
    "P07@2100-09-01T10:00:00": 1,   # exactly 30 days
    "P07@2100-10-02T10:00:00": 0,
    "P08@2100-11-01T00:00:00": 0,   # 30 days and one hour
    "P08@2100-12-02T01:00:00": 0,
    "P09@2101-01-05T09:00:00": 0,
}


def test_criterion_05_cohort_rules(criterion, admissions_fixture):
    records = load_admissions(admissions_fixture)
    ds = build_cohort(records)
    got = {d.doc_id: d.label for d in ds.documents}
    summary_ok = ds.summary == {"n_patients": 9, "n_admissions_in": 20, "n_excluded_death": 2,
                                "n_excluded_newborn": 2, "n_positive": 4, "n_negative": 12}
    ok = len(records) == 20 and got == EXPECTED_LABELS and summary_ok
    wrong = sorted(k for k in set(got) | set(EXPECTED_LABELS) if got.get(k) != EXPECTED_LABELS.get(k))
    criterion(5, ok, f"{len(got)} admissions kept, {sum(got.values())} positive, "
                     f"mismatches {wrong or 'none'}")
    assert ok


# 6 -------------------------------------------------------------------------


def test_criterion_06_rationale_recovery(criterion, acceptance_data, acceptance_infocal):
    model, history, seconds = acceptance_infocal
    test = acceptance_data.test
    res = predict_batch(model, test)
    auc = roc_auc(res["pred"], [d.label for d in test])
    rec = rationale_recovery(res["masks"], test)
    ok = auc >= 0.90 and rec["f1"] >= 0.70 and seconds < 15 * 60
    criterion(6, ok, f"test AUC {auc:.4f} (>= 0.90), rationale F1 {rec['f1']:.4f} (>= 0.70; "
                     f"P {rec['precision']:.3f} R {rec['recall']:.3f}), {len(history)} epochs, "
                     f"{seconds:.0f} s (< 900 s)")
    assert ok


# 7 -------------------------------------------------------------------------


def _ranking(model, docs, vocab):
    signal = set(signal_vocabulary(20))
    att_sig, att_non, lrp_sig, lrp_non = [], [], [], []
    for d in docs:
        fr = transformer_forward(model, d, vocab)
        att = attention_importance(fr.attention, -1, "cls-to-token", fr.n_tokens)
        lrp = lrp_relevance(model, d, fr.cache, 1e-6).scores
        planted = d.planted_mask() > 0.5
        non = np.array([t not in signal for t in d.tokens])
        att_sig += list(att[planted])
        att_non += list(att[non])
        lrp_sig += list(lrp[planted])
        lrp_non += list(lrp[non])
    return [np.mean(v) for v in (att_sig, att_non, lrp_sig, lrp_non)]


def test_criterion_07_comparator(criterion, acceptance_data, acceptance_transformer):
    model, _ = acceptance_transformer
    d = acceptance_data
    auc = roc_auc(predict_proba(model, d.test, d.vocab), [x.label for x in d.test])
    held = list(d.val) + list(d.test)
    a_sig, a_non, l_sig, l_non = _ranking(model, held, d.vocab)
    ok = auc >= 0.95 and a_sig > a_non and l_sig > l_non and len(held) >= 500
    criterion(7, ok, f"test AUC {auc:.4f} (>= 0.95); over {len(held)} held-out docs attention "
                     f"{a_sig:.4f} vs {a_non:.4f}, LRP {l_sig:.4f} vs {l_non:.4f} (signal vs non-signal)")
    assert ok


# 8 -------------------------------------------------------------------------


def test_criterion_08_sparsity_and_histogram(criterion, acceptance_data, acceptance_infocal, tmp_path):
    model, _, _ = acceptance_infocal
    test = acceptance_data.test
    preds = predict_batch(model, test)["pred"]
    rats = [extract_rationale(model, d) for d in test]
    stats = rationale_stats(rats, {d.doc_id: float(p) for d, p in zip(test, preds)},
                            {d.doc_id: d.label for d in test},
                            {d.doc_id: d.planted_rationale for d in test})
    mean_prop = float(np.mean([r.proportion for r in rats]))
    path = tmp_path / "hist.csv"
    write_histogram_csv(path, stats)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    groups = {r["group"] for r in rows}
    total = sum(int(r["count"]) for r in rows)
    ok = 0.1 <= mean_prop <= 0.5 and groups == {"TP", "FP", "TN", "FN"} and total == len(test)
    sizes = {g: len(v) for g, v in stats.proportions.items()}
    criterion(8, ok, f"mean proportion {mean_prop:.3f} in [0.1, 0.5]; histogram groups "
                     f"{sorted(groups)} hold {total}/{len(test)} docs {sizes}")
    assert ok


# 9 -------------------------------------------------------------------------


def _train_eval(tmp, corpus, model, extra):
    ckpt = str(tmp / "model.ckpt")
    assert cli.main(["train", "--model", model, "--corpus", corpus, "--out", ckpt] + extra) == 0
    metrics = tmp / "metrics.json"
    assert cli.main(["eval", "--model-path", ckpt, "--split", "test", "--out", str(metrics)]) == 0
    return metrics.read_bytes(), (tmp / "model.ckpt").read_bytes()


def test_criterion_09_determinism(criterion, tmp_path, easy_data):
    corpus = str(tmp_path / "corpus.jsonl")
    write_corpus(corpus, easy_data.dataset.documents[:200])
    runs = {
        "infocal": ["--epochs", "2", "--hidden", "8", "--embedding-dim", "8", "--embedding-epochs", "1"],
        "transformer": ["--epochs", "2", "--d-model", "16"],
        "logreg": [],
        "rf": ["--n-trees", "5"],
    }
    same = {}
    for model, extra in runs.items():
        (tmp_path / model).mkdir()
        first = _train_eval(tmp_path / model, corpus, model, extra)
        second = _train_eval(tmp_path / model, corpus, model, extra)
        keys = set(json.loads(first[0]))
        same[model] = first == second and keys == {"auc", "auprc", "r80", "f1_macro", "n_samples", "config"}
    ok = all(same.values())
    criterion(9, ok, "repeat train+eval gives byte-identical metrics JSON and checkpoint: "
                     + ", ".join(f"{k}={'yes' if v else 'NO'}" for k, v in same.items()))
    assert ok


# 10 ------------------------------------------------------------------------


def test_criterion_10_schedule(criterion, tmp_path, easy_data):
    corpus = str(tmp_path / "tiny.jsonl")
    write_corpus(corpus, easy_data.dataset.documents[:30])
    hist = tmp_path / "h.csv"
    rc = cli.main(["train", "--model", "infocal", "--corpus", corpus, "--epochs", "100",
                   "--hidden", "4", "--embedding-dim", "4", "--embedding-epochs", "1",
                   "--out", str(tmp_path / "m.ckpt"), "--history", str(hist)])
    with open(hist, newline="") as fh:
        rows = list(csv.DictReader(fh))
    bad = [r["epoch"] for r in rows if float(r["lr"]) != 0.001 * 0.01 ** (int(r["epoch"]) // 25)]
    ok = rc == 0 and len(rows) == 100 and not bad
    lrs = sorted({float(r["lr"]) for r in rows}, reverse=True)
    criterion(10, ok, f"{len(rows)} epochs logged, distinct lr {lrs}, mismatching epochs {bad or 'none'}")
    assert ok
