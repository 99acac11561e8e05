import numpy as np
import pytest

from rlab import autodiff as ad
from rlab import gradcheck as gc
from rlab import nn
from rlab.errors import DimensionError


def _inputs(rng, B=3, T=5, E=4, H=3):
    x = ad.parameter(rng.normal(size=(B, T, E)))
    w_in = ad.parameter(rng.normal(size=(E, 3 * H)) * 0.5)
    w_hid = ad.parameter(rng.normal(size=(H, 3 * H)) * 0.5)
    bias = ad.parameter(rng.normal(size=3 * H) * 0.1)
    mask = np.ones((B, T))
    mask[0, 3:] = 0
    mask[2, 1:] = 0
    return x, w_in, w_hid, bias, mask


def test_fused_gru_matches_composed():
    rng = np.random.default_rng(0)
    x, w_in, w_hid, bias, mask = _inputs(rng)
    fused = nn.gru(x, w_in, w_hid, bias, mask)
    slow = nn.gru_composed(x, w_in, w_hid, bias, mask)
    assert np.abs(fused.data - slow.data).max() < 1e-14
    proj = ad.constant(rng.normal(size=fused.shape))
    g_fast = gc.analytic_grad(lambda: ad.sum_(nn.gru(x, w_in, w_hid, bias, mask) * proj),
                              [x, w_in, w_hid, bias])
    g_slow = gc.analytic_grad(lambda: ad.sum_(nn.gru_composed(x, w_in, w_hid, bias, mask) * proj),
                              [x, w_in, w_hid, bias])
    for a, b in zip(g_fast, g_slow):
        assert np.abs(a - b).max() < 1e-12


def test_masked_steps_carry_state():
    rng = np.random.default_rng(1)
    x, w_in, w_hid, bias, mask = _inputs(rng)
    h = nn.gru(x, w_in, w_hid, bias, mask).data
    assert np.array_equal(h[0, 2], h[0, 4])
    assert np.array_equal(nn.last_state(ad.constant(h)).data[2], h[2, 0])


def test_gru_shape_errors():
    rng = np.random.default_rng(2)
    x, w_in, w_hid, bias, mask = _inputs(rng)
    with pytest.raises(DimensionError):
        nn.gru(x, w_hid, w_hid, bias, mask)
    with pytest.raises(DimensionError):
        nn.gru(x, w_in, w_hid, bias, mask[:, :2])


def test_bigru_gradcheck_and_padding_invariance():
    rng = np.random.default_rng(3)
    bi = nn.BiGRU(rng, 3, 2)
    x = ad.parameter(rng.normal(size=(2, 4, 3)))
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0.0]])
    proj = ad.constant(rng.normal(size=(2, 4, 4)) * np.repeat(mask[:, :, None], 4, axis=2))
    assert gc.check(lambda: ad.sum_(bi(x, mask) * proj), [x] + bi.parameters()) < 1e-6
    # content in the padded tail must not reach real positions
    x2 = x.data.copy()
    x2[1, 2:] = rng.normal(size=(2, 3))
    with ad.no_grad():
        a = bi(ad.constant(x.data), mask).data
        b = bi(ad.constant(x2), mask).data
    assert np.array_equal(a[1, :2], b[1, :2])


def test_backward_direction_reads_reversed_sequence():
    rng = np.random.default_rng(4)
    bi = nn.BiGRU(rng, 2, 3)
    x = rng.normal(size=(1, 3, 2))
    with ad.no_grad():
        full = bi(ad.constant(x), np.ones((1, 3))).data
        rev = bi.bwd(ad.constant(x[:, ::-1].copy()), np.ones((1, 3))).data
    assert np.allclose(full[0, 0, 3:], rev[0, 2])


def test_masked_mean():
    s = ad.constant(np.arange(12.0).reshape(1, 4, 3))
    out = nn.masked_mean(s, np.array([[1, 1, 0, 0.0]])).data
    assert np.allclose(out, [[1.5, 2.5, 3.5]])


def test_module_state_round_trip():
    rng = np.random.default_rng(5)
    a, b = nn.Linear(rng, 3, 2), nn.Linear(rng, 3, 2)
    b.load_state(a.state())
    assert all(np.array_equal(a.state()[k], b.state()[k]) for k in a.state())
    with pytest.raises(KeyError):
        b.load_state({"weight": a.weight.data})
