import numpy as np
import pytest
from hypothesis import given, strategies as st

from rlab.errors import ContractError
from rlab.report import (ANSI_ON, compare_methods, default_top_k, highlighted_tokens, jaccard,
                         read_explanations, render_highlight_report, select_highlights,
                         strip_markup, write_jsonl)
from rlab.text import Document, tokenize

SAMPLE = tokenize("prescribed warfarin due to high sys blood pressure")


def test_all_zero_and_all_one_masks():
    n = len(SAMPLE)
    for fmt in ("html", "ansi"):
        none = render_highlight_report(SAMPLE, mask=np.zeros(n), fmt=fmt)
        assert highlighted_tokens(none, fmt) == set()
        assert strip_markup(none, fmt) == " ".join(SAMPLE)
        every = render_highlight_report(SAMPLE, mask=np.ones(n), fmt=fmt)
        assert highlighted_tokens(every, fmt) == set(range(n))
    assert render_highlight_report(SAMPLE, mask=np.zeros(n), fmt="ansi") == " ".join(SAMPLE)


def test_sample_sentence_highlights():
    mask = np.array([t in {"warfarin", "high", "pressure"} for t in SAMPLE], float)
    out = render_highlight_report(SAMPLE, mask=mask)
    assert [SAMPLE[i] for i in sorted(highlighted_tokens(out))] == ["warfarin", "high", "pressure"]
    assert out.startswith("<div style=") and "<span style=" in out and "<style" not in out
    ansi = render_highlight_report(SAMPLE, mask=mask, fmt="ansi")
    assert ansi.count(ANSI_ON) == 3


@given(st.lists(st.text(st.sampled_from("ab<>&\"' x"), min_size=1, max_size=5).map(str.strip)
                .filter(lambda s: s and " " not in s), min_size=1, max_size=12), st.data())
def test_round_trip_strips_to_tokens(tokens, data):
    mask = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(tokens), max_size=len(tokens))))
    for fmt in ("html", "ansi"):
        out = render_highlight_report(tokens, mask=mask, fmt=fmt)
        assert strip_markup(out, fmt).split(" ") == tokens
        assert highlighted_tokens(out, fmt) == set(np.flatnonzero(mask).tolist())


def test_score_selection_rules():
    scores = np.array([0.1, 0.9, 0.3, 0.8, 0.2, 0.7, 0.0])
    assert default_top_k(7) == 2 and default_top_k(20) == 3 and default_top_k(21) == 4
    assert select_highlights(7, scores=scores) == {1, 3}
    assert select_highlights(7, scores=scores, top_k=3) == {1, 3, 5}
    assert select_highlights(7, scores=scores, threshold=0.25) == {1, 2, 3, 5}
    with pytest.raises(ContractError):
        render_highlight_report(SAMPLE, scores=np.ones(3))
    with pytest.raises(ContractError):
        render_highlight_report(SAMPLE, mask=np.ones(len(SAMPLE)), fmt="pdf")
    with pytest.raises(ContractError):
        select_highlights(3)


def test_jaccard_values():
    assert jaccard({1, 2}, {1, 2}) == 1.0
    assert jaccard({1}, {2}) == 0.0
    assert jaccard(set(), set()) == 1.0
    assert jaccard({1, 2, 3}, {2, 3, 4}) == 0.5


def test_three_method_fixture():
    doc = Document("n1", tuple(SAMPLE), 1)
    outputs = {
        "rationale": {"doc_id": "n1", "kept_positions": [1, 4, 7]},
        # top-2 of 8 tokens: positions 1 and 4
        "attention": {"doc_id": "n1", "scores": [0, .9, 0, 0, .8, 0, 0, .1]},
        # top-2: positions 6 and 7
        "lrp": {"doc_id": "n1", "scores": [0, 0, 0, 0, 0, 0, 2.0, 1.0]},
    }
    cmp = compare_methods(doc, outputs)
    assert [r.method for r in cmp.rows] == ["rationale", "attention", "lrp"]
    assert cmp.jaccard == {("rationale", "attention"): 2 / 3,
                           ("rationale", "lrp"): 1 / 4,
                           ("attention", "lrp"): 0.0}
    assert cmp.rows[0].words(cmp.tokens) == ["warfarin", "high", "pressure"]
    assert cmp.notices == []
    assert "<table" in cmp.to_html() and "jaccard rationale/attention = 0.667" in cmp.to_text()


def test_missing_method_gets_notice_and_mismatch_errors():
    doc = Document("n1", tuple(SAMPLE), 1)
    cmp = compare_methods(doc, {"rationale": {"doc_id": "n1", "kept_positions": [0]}})
    assert len(cmp.rows) == 1 and len(cmp.notices) == 2 and "lrp" in cmp.notices[1]
    with pytest.raises(ContractError):
        compare_methods(doc, {"lrp": {"doc_id": "other", "scores": [0] * 8}})


def test_explanation_round_trip(tmp_path):
    recs = [{"doc_id": "a", "scores": [0.5, 0.25]}, {"doc_id": "b", "kept_positions": [1]}]
    write_jsonl(tmp_path / "x.jsonl", recs)
    assert read_explanations(tmp_path / "x.jsonl") == {"a": recs[0], "b": recs[1]}
