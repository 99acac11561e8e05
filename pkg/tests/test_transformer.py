import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import straight_line_lrp
from rlab.errors import ContractError, DimensionError
from rlab.lrp import lrp_linear, lrp_mlp
from rlab.metrics import roc_auc
from rlab.synth import signal_vocabulary
from rlab.text import PAD, Document, Vocab
from rlab.transformer import (TinyTransformer, TransformerConfig, _encode, _val_loss, attention,
                              attention_importance, forward_batch, lrp_relevance, predict_proba,
                              transformer_forward)

WORDS = [f"w{i}" for i in range(12)]


@pytest.fixture(scope="module")
def tiny():
    cfg = TransformerConfig(d_model=8, n_layers=2, heads=2, max_seq_len=10, seed=3)
    return TinyTransformer(len(Vocab(WORDS)), cfg), Vocab(WORDS)


def mkdoc(toks, doc_id="d", label=1):
    return Document(doc_id, tuple(toks), label)


# ---------------------------------------------------------------------------
# attention


def test_attention_examples():
    out, w = attention([[0.3, -1.0]], [[2.0, 1.0]], [[4.0, 5.0]], 2)
    assert w.tolist() == [[1.0]] and out.tolist() == [[4.0, 5.0]]
    out, w = attention([[1.0, 2.0]], [[0.5, 0.5], [0.5, 0.5]], [[1.0, 3.0], [3.0, 5.0]], 2)
    assert w.tolist() == [[0.5, 0.5]] and out.tolist() == [[2.0, 4.0]]
    out, w = attention([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0], [0.0]], 2)
    expected = 1.0 / (1.0 + math.exp(-1.0 / math.sqrt(2.0)))
    assert abs(w[0, 0] - expected) < 1e-15 and abs(out[0, 0] - 0.6698) < 1e-4


def test_attention_shape_errors():
    with pytest.raises(DimensionError, match="d=3"):
        attention(np.ones((1, 2)), np.ones((2, 2)), np.ones((2, 1)), 3)
    with pytest.raises(DimensionError):
        attention(np.ones((1, 2)), np.ones((2, 3)), np.ones((2, 1)), 2)
    with pytest.raises(DimensionError):
        attention(np.ones((1, 2)), np.ones((2, 2)), np.ones((3, 1)), 2)


@given(arrays(np.float64, (3, 4), elements=st.floats(-20, 20)),
       arrays(np.float64, (5, 4), elements=st.floats(-20, 20)))
def test_attention_rows_stochastic(Q, K):
    _, w = attention(Q, K, np.ones((5, 2)), 4)
    assert np.abs(w.sum(axis=1) - 1).max() < 1e-9 and (w >= 0).all()


# ---------------------------------------------------------------------------
# forward pass


def test_config_contracts():
    with pytest.raises(ContractError):
        TransformerConfig(d_model=10, heads=4)
    m = TinyTransformer(5)
    assert [h.weight.shape for h in m.head] == [(64, 171), (171, 64), (64, 1)]


def test_forward_maps_and_determinism(tiny):
    model, vocab = tiny
    d = mkdoc(["w1", "w2", "zzz", "w3"])
    fr = transformer_forward(model, d, vocab)
    assert 0 < fr.probability < 1 and fr.n_tokens == 4 and not fr.truncated
    assert len(fr.attention) == 2
    for A in fr.attention:
        assert A.shape == (2, 5, 5) and np.abs(A.sum(axis=-1) - 1).max() < 1e-9
    assert transformer_forward(model, d, vocab).probability == fr.probability


def test_padding_tail_does_not_change_output(tiny):
    model, vocab = tiny
    short, long = mkdoc(["w4", "w5"], "a"), mkdoc(["w1"] * 7, "b")
    alone = predict_proba(model, [short], vocab)[0]
    batched = predict_proba(model, [short, long], vocab)[0]
    assert abs(alone - batched) < 1e-12
    ids, mask, _ = _encode([short, long], vocab, model.max_tokens)
    base = forward_batch(model, ids, mask).data
    junk = ids.copy()
    junk[0, 3:] = np.random.default_rng(0).integers(3, len(vocab), size=junk.shape[1] - 3)
    assert np.array_equal(forward_batch(model, junk, mask).data, base)
    perm = ids.copy()
    perm[0, 3:] = perm[0, 3:][::-1]
    assert np.array_equal(forward_batch(model, perm, mask).data, base)
    assert (ids[0, 3:] == PAD).all()


def test_truncation_flag(tiny, caplog):
    model, vocab = tiny
    fr = transformer_forward(model, mkdoc(["w1"] * 15), vocab)
    assert fr.truncated and fr.n_tokens == 10
    assert "truncated" in caplog.text


# ---------------------------------------------------------------------------
# attention importance


def test_importance_uniform_and_normalized(tiny):
    uniform = [np.full((2, 5, 5), 0.2)]
    assert np.allclose(attention_importance(uniform), 0.25)
    assert np.allclose(attention_importance(uniform, strategy="mean-over-heads"), 0.25)
    model, vocab = tiny
    fr = transformer_forward(model, mkdoc(["w1", "w7", "w2"]), vocab)
    for strategy in ("cls-to-token", "mean-over-heads"):
        for layer in (0, 1, -1):
            s = attention_importance(fr.attention, layer, strategy, fr.n_tokens)
            assert s.shape == (3,) and abs(s.sum() - 1) < 1e-12


def test_importance_errors(tiny):
    maps = [np.full((1, 3, 3), 1 / 3)]
    with pytest.raises(IndexError):
        attention_importance(maps, layer=1)
    with pytest.raises(ContractError):
        attention_importance(maps, strategy="max")


# ---------------------------------------------------------------------------
# LRP


def test_lrp_single_linear_example():
    r = lrp_linear(np.array([1.0, 2.0]), np.array([[0.5], [0.25]]), None, np.array([1.0]), eps=0.0)
    assert r.tolist() == [0.5, 0.5]


@given(st.integers(0, 10_000))
def test_lrp_conservation_bias_free(seed):
    rng = np.random.default_rng(seed)
    dims = [4, 6, 5, 1]
    ws = [np.abs(rng.normal(size=(a, b))) for a, b in zip(dims, dims[1:])]
    res = lrp_mlp(ws, [None] * 3, np.abs(rng.normal(size=4)), eps=0.0)
    assert abs(res.input_relevance.sum() - res.output_relevance) < 1e-9


def test_lrp_matches_straight_line_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        ws = [rng.normal(size=(5, 4)), rng.normal(size=(4, 1))]
        bs = [rng.normal(size=4) * 0.1, rng.normal(size=1) * 0.1]
        x = rng.normal(size=5)
        res = lrp_mlp(ws, bs, x, eps=1e-6)
        oracle = straight_line_lrp(ws, bs, x, 1e-6)
        assert np.abs(np.array(res.layer_sums) - np.array(oracle)).max() < 1e-8
        assert res.leakage == res.output_relevance - float(res.input_relevance.sum())


def test_transformer_lrp_leakage_scale_and_finiteness(tiny):
    model, vocab = tiny
    d = mkdoc(["w3", "w1", "w9", "w9", "w2"])
    fr = transformer_forward(model, d, vocab)
    rm = lrp_relevance(model, d, fr.cache, epsilon=1e-6)
    assert rm.scores.shape == (5,) and np.isfinite(rm.scores).all()
    assert rm.output_relevance == pytest.approx(math.log(fr.probability / (1 - fr.probability)),
                                                rel=1e-9)
    assert rm.leakage == rm.output_relevance - (float(rm.scores.sum()) + rm.cls_relevance)
    double = lrp_relevance(model, d, fr.cache, epsilon=1e-6, output_relevance=2 * rm.output_relevance)
    assert np.allclose(double.scores, 2 * rm.scores, rtol=1e-9, atol=1e-15)


def test_transformer_lrp_errors(tiny):
    model, vocab = tiny
    d = mkdoc(["w1"])
    with pytest.raises(ContractError):
        lrp_relevance(model, d, None)
    with pytest.raises(ContractError):
        lrp_relevance(model, d, transformer_forward(model, d, vocab).cache, epsilon=-1)


# ---------------------------------------------------------------------------
# trained model


def test_easy_transformer(easy_data, easy_transformer):
    model, rows = easy_transformer
    d = easy_data
    assert 1 <= len(rows) <= 15
    best = min(r["val_loss"] for r in rows)
    assert _val_loss(model, d.val, d.vocab) == pytest.approx(best, rel=1e-12)
    assert roc_auc(predict_proba(model, d.test, d.vocab), [x.label for x in d.test]) >= 0.95

    signal = set(signal_vocabulary(20))
    sig, non = [], []
    for doc in d.test:
        fr = transformer_forward(model, doc, d.vocab)
        s = attention_importance(fr.attention, -1, "cls-to-token", fr.n_tokens)
        mask = np.array([t in signal for t in doc.tokens])
        sig += list(s[mask])
        non += list(s[~mask])
    assert np.mean(sig) > np.mean(non)
