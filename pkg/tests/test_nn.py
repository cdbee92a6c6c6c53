import numpy as np
import pytest

from stochrelu.circuit import Mode
from stochrelu.faultmodel import p_total_fault
from stochrelu.field import DEFAULT_PARAMS, FieldParams, decode_array, encode_array
from stochrelu.models import gen_model, make_task, random_inputs
from stochrelu.nn import (
    AvgPool,
    Conv2D,
    Flatten,
    FullyConnected,
    Model,
    ReLU,
    ReluRecord,
    ShapeError,
    StochasticReluConfig,
    infer_plain,
    infer_stochastic,
    logits_signed,
    predict,
    relu_masks,
    stochastic_relu_sim,
)

P257 = FieldParams(257)
P = DEFAULT_PARAMS.p


def _round_shift(v, shift):
    if not shift:
        return v
    mag = (abs(v) + (1 << (shift - 1))) >> shift
    return mag if v >= 0 else -mag


def naive_forward(model, x):
    """Signed big-integer reference with explicit loops."""
    params = model.params
    sd = lambda a: [int(v) for v in decode_array(np.asarray(a).ravel(), params)]
    y = np.array(x, dtype=object)
    for layer in model.layers:
        if isinstance(layer, FullyConnected):
            w = np.array(sd(layer.weight), dtype=object).reshape(layer.weight.shape)
            b = sd(layer.bias) if layer.bias is not None else [0] * w.shape[0]
            y = np.array([_round_shift(sum(w[o, i] * y[i] for i in range(w.shape[1])) + b[o], layer.shift) for o in range(w.shape[0])], dtype=object)
        elif isinstance(layer, Conv2D):
            w = np.array(sd(layer.weight), dtype=object).reshape(layer.weight.shape)
            b = sd(layer.bias) if layer.bias is not None else [0] * w.shape[0]
            o_ch, i_ch, kh, kw = w.shape
            c, h, wd = y.shape
            pad = np.zeros((c, h + 2 * layer.pad, wd + 2 * layer.pad), dtype=object)
            pad[:, layer.pad : layer.pad + h, layer.pad : layer.pad + wd] = y
            oh = (h + 2 * layer.pad - kh) // layer.stride + 1
            ow = (wd + 2 * layer.pad - kw) // layer.stride + 1
            out = np.zeros((o_ch, oh, ow), dtype=object)
            for o in range(o_ch):
                for r in range(oh):
                    for q in range(ow):
                        acc = b[o]
                        for ci in range(i_ch):
                            for u in range(kh):
                                for v in range(kw):
                                    acc += w[o, ci, u, v] * pad[ci, r * layer.stride + u, q * layer.stride + v]
                        out[o, r, q] = _round_shift(acc, layer.shift)
            y = out
        elif isinstance(layer, AvgPool):
            s = layer.size
            c, h, wd = y.shape
            y = np.array([[[sum(y[ch, r * s + u, q * s + v] for u in range(s) for v in range(s)) for q in range(wd // s)] for r in range(h // s)] for ch in range(c)], dtype=object)
        elif isinstance(layer, Flatten):
            y = y.ravel()
        else:
            y = np.array([v if v >= 0 else 0 for v in y.ravel()], dtype=object).reshape(y.shape)
    return [int(v) for v in np.asarray(y).ravel()]


def test_identity_conv():
    w = encode_array(np.ones((1, 1, 1, 1), dtype=np.int64))
    model = Model([Conv2D(w)], (1, 4, 4))
    x = encode_array(np.arange(-8, 8).reshape(1, 4, 4))
    np.testing.assert_array_equal(infer_plain(model, x)[0], x)


def test_fc_example():
    model = Model([FullyConnected(np.array([[1, 2], [3, 4]]))], (2,), P257)
    np.testing.assert_array_equal(infer_plain(model, np.array([5, 6]))[0], [17, 39])


def test_random_model_against_naive_oracle():
    model = gen_model("in:2x6x6,conv:3x3/s1/p1,relu,pool:2,flatten,fc:8,relu,fc:4", seed=3, frac_bits=4)
    xs = random_inputs(model, 100, seed=4, bound=40)
    got = logits_signed(infer_plain(model, encode_array(xs)), DEFAULT_PARAMS)
    for x, row in zip(xs, got):
        assert list(row) == naive_forward(model, x)


def test_strided_conv_against_oracle():
    model = gen_model("in:1x7x7,conv:2x3/s2/p1,relu,flatten,fc:3", seed=5)
    xs = random_inputs(model, 20, seed=6)
    got = logits_signed(infer_plain(model, encode_array(xs)), DEFAULT_PARAMS)
    for x, row in zip(xs, got):
        assert list(row) == naive_forward(model, x)


def test_shape_errors():
    with pytest.raises(ShapeError):
        Model([FullyConnected(np.zeros((2, 3), dtype=np.int64))], (4,))
    with pytest.raises(ShapeError):
        Model([Conv2D(np.zeros((1, 1, 3, 3), dtype=np.int64))], (9,))
    with pytest.raises(ShapeError):
        Model([AvgPool(4)], (1, 2, 2))
    model = Model([ReLU()], (3,))
    with pytest.raises(ShapeError):
        infer_plain(model, np.zeros((2, 4), dtype=np.int64))


def test_stochastic_relu_examples():
    cfg = StochasticReluConfig(0, Mode.POS_ZERO)
    x = 25
    for t in (0, 1, 1000, P - x - 1):  # server share never wraps
        assert stochastic_relu_sim(x, cfg, mask=t) == x
    neg = P - 25
    for t in (25, 26, 10**6, P - 1):
        assert stochastic_relu_sim(neg, cfg, mask=t) == 0
    assert stochastic_relu_sim(0, StochasticReluConfig(8), mask=123) == 0


def test_stochastic_relu_rate_matches_fault_model():
    rng = np.random.default_rng(0)
    k = 10
    for x in (1, 100, 700, 1023, 1024, 5000, -1, -700, 2**20, -(2**25)):
        for mode in Mode:
            xv = x % P
            out = stochastic_relu_sim(np.full(1_000_000, xv), StochasticReluConfig(k, mode), rng)
            exact = xv if x >= 0 else 0
            rate = float(np.mean(out != exact))
            expect = p_total_fault(x, k, mode)
            sigma = np.sqrt(max(expect * (1 - expect), 1e-12) / 1_000_000)
            assert abs(rate - expect) <= 3 * sigma + 1e-6


def test_k_zero_without_overflow_equals_plain():
    model = gen_model("in:8,fc:16,relu,fc:16,relu,fc:3", seed=8)
    xs = encode_array(random_inputs(model, 50, seed=9))
    masks = relu_masks(model, 50, seed=1)
    # masks in [0, p - 2^20) cannot overflow for these small activations
    masks = [np.mod(m, P - 2**20) for m in masks]
    np.testing.assert_array_equal(infer_stochastic(model, xs, StochasticReluConfig(0), masks=masks), infer_plain(model, xs))


def test_large_k_zeroes_positive_activations():
    rng = np.random.default_rng(1)
    x = rng.integers(1, 2**20, size=20_000)
    out = stochastic_relu_sim(x, StochasticReluConfig(DEFAULT_PARAMS.m - 1, Mode.POS_ZERO), rng)
    assert np.mean(out == 0) >= 0.9


def test_masks_are_per_sample():
    model = gen_model("in:4,fc:6,relu,fc:2", seed=2)
    a = relu_masks(model, 5, seed=3)
    b = relu_masks(model, 3, seed=3, offset=2)
    np.testing.assert_array_equal(a[0][2:], b[0])


def test_record_flags_faults():
    model = gen_model("in:4,fc:6,relu,fc:2", seed=2)
    xs = encode_array(random_inputs(model, 10, seed=3))
    record: list[ReluRecord] = []
    out = infer_stochastic(model, xs, StochasticReluConfig(12, Mode.POS_ZERO, 4), record=record)
    assert len(record) == 1 and record[0].pre.shape == (10, 6)
    assert out.shape == (10, 2)
    assert record[0].faults.any()


def test_accuracy_falls_once_k_passes_activation_scale():
    model, x, y = make_task(seed=0, n=400)
    xr = encode_array(x)
    base = float((predict(model, xr) == y).mean())
    acc = {k: float((predict(model, xr, StochasticReluConfig(k, Mode.POS_ZERO, 0)) == y).mean()) for k in (0, 2, 8, 10, 12)}
    assert abs(acc[0] - base) <= 0.01 and abs(acc[2] - base) <= 0.01
    assert acc[8] >= acc[10] - 0.02 and acc[10] >= acc[12] - 0.02
    assert acc[12] < base - 0.1


def test_config_validation():
    with pytest.raises(ValueError):
        StochasticReluConfig(-1)
    with pytest.raises(ValueError):
        StochasticReluConfig(31).check(DEFAULT_PARAMS)
