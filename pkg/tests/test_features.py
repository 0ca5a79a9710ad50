import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from motiongate.features import (KernelBank, QuantConfig, QuantLengthError, flatten_raw, kernel_transform,
                                 power_transform_apply, power_transform_fit, quant_transform)
from motiongate.features.featurizer import Featurizer

from oracles import conv_direct, quant_column_count, quant_oracle


def one_kernel(weights, bias, dilation=1, padding=0, L=4):
    return KernelBank(lengths=[len(weights)], biases=[bias], dilations=[dilation], paddings=[padding],
                      channel_counts=[1], channels=[0], weights=weights, input_length=L, n_channels=1)


# ---------------------------------------------------------------------------
# kernels

@pytest.mark.parametrize("bias,ppv,mx", [(0.5, 0.0, -1.5), (3.0, 1.0, 1.0), (2.0, 0.0, 0.0)])
def test_hand_convolution(bias, ppv, mx):
    # {1, 0, -1} over {1, 2, 3, 4} gives {-2, -2} before the bias
    out = kernel_transform(np.array([[1.0, 2.0, 3.0, 4.0]]), one_kernel([1.0, 0.0, -1.0], bias))
    np.testing.assert_allclose(conv_direct([1, 2, 3, 4], [1, 0, -1], bias, 1, 0), [-2 + bias] * 2)
    assert out[0, 0] == ppv and out[0, 1] == pytest.approx(mx, abs=1e-15)


@pytest.mark.parametrize("bias", [-0.7, 0.4])
def test_zero_sample(bias):
    bank = KernelBank.generate(50, 60, 1, seed=1)
    bank = KernelBank(bank.lengths, np.full(50, bias), bank.dilations, bank.paddings, bank.channel_counts,
                      bank.channels, bank.weights, 60, 1)
    out = kernel_transform(np.zeros((1, 60)), bank)
    assert np.all(out[0, 0::2] == (1.0 if bias > 0 else 0.0))
    if bias > 0:
        np.testing.assert_allclose(out[0, 1::2], bias)


@given(st.integers(0, 2**31), st.integers(12, 80), st.integers(1, 4))
def test_kernel_features_match_direct_convolution(seed, L, M):
    bank = KernelBank.generate(8, L, M, seed=seed)
    x = np.random.default_rng(seed).normal(size=(L, M))
    out = kernel_transform(x[None], bank)
    w_at = 0
    for k in range(bank.n_kernels):
        length, cc = int(bank.lengths[k]), int(bank.channel_counts[k])
        chans = bank.channels[k * cc:(k + 1) * cc]
        conv = 0.0
        for i, c in enumerate(chans):
            w = bank.weights[w_at + i * length:w_at + (i + 1) * length]
            conv = conv + conv_direct(x[:, c], w, 0.0, int(bank.dilations[k]), int(bank.paddings[k]))
        conv = conv + bank.biases[k]
        w_at += length * cc
        assert out[0, 2 * k] == pytest.approx(np.mean(conv > 0), abs=1e-15)
        assert out[0, 2 * k + 1] == pytest.approx(conv.max(), rel=1e-12, abs=1e-12)


@given(st.integers(0, 2**31), st.integers(10, 300), st.integers(1, 9))
def test_bank_invariants(seed, L, M):
    bank = KernelBank.generate(40, L, M, seed=seed)
    span = (bank.lengths - 1) * bank.dilations + 1
    assert np.all(span <= L + 2 * bank.paddings)
    assert set(bank.lengths.tolist()) <= {7, 9, 11}
    assert np.all(np.abs(bank.biases) <= 1)
    assert np.all(bank.channel_counts == max(1, int(np.sqrt(M))))
    again = KernelBank.generate(40, L, M, seed=seed)
    for key, value in bank.to_arrays().items():
        np.testing.assert_array_equal(value, again.to_arrays()[key])
    X = np.random.default_rng(seed).normal(size=(3, L, M))
    F = kernel_transform(X, bank)
    assert F.shape == (3, 80)
    assert np.all((F[:, 0::2] >= 0) & (F[:, 0::2] <= 1))
    np.testing.assert_array_equal(F, kernel_transform(X, bank))


def test_kernel_weights_are_centred():
    bank = KernelBank.generate(30, 100, 1, seed=3)
    at = 0
    for length in bank.lengths:
        assert abs(bank.weights[at:at + length].mean()) < 1e-12
        at += length


def test_kernel_shape_mismatch():
    bank = KernelBank.generate(4, 50, 2, seed=0)
    with pytest.raises(ValueError):
        kernel_transform(np.zeros((1, 50, 3)), bank)


# ---------------------------------------------------------------------------
# quant

def test_quant_median_of_four():
    x = np.array([1.0, 2.0, 3.0, 4.0])[None, :, None]
    out = quant_transform(x, QuantConfig(depth=1, divisor=4, representations=("raw",)))
    assert out.tolist() == [[2.5]]


def test_quant_constant_sample():
    x = np.full((1, 64, 2), 3.25)
    cfg = QuantConfig(depth=6, divisor=4)
    out = quant_transform(x, cfg)
    raw = quant_transform(x, QuantConfig(6, 4, ("raw",)))
    assert out.shape[1] == quant_column_count(64, 2, 6, 4)
    assert np.all(raw == 3.25)
    assert np.all(out[:, raw.shape[1]:] == 0)


def test_quant_ramp_differences():
    x = (0.5 * np.arange(64.0))[None, :, None]
    out = quant_transform(x, QuantConfig(6, 4, ("diff1",)))
    np.testing.assert_allclose(out, 0.5, rtol=0, atol=1e-15)


@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6), st.integers(1, 3))
def test_quant_matches_sorting_oracle(seed, depth, divisor, M):
    L = 2 ** (depth - 1) + int(np.random.default_rng(seed).integers(0, 40))
    x = np.random.default_rng(seed).normal(size=(2, L, M))
    out = quant_transform(x, QuantConfig(depth, divisor))
    for i in range(2):
        np.testing.assert_allclose(out[i], quant_oracle(x[i], depth, divisor), rtol=0, atol=1e-12)


def test_quant_column_counts_closed_form():
    rng = np.random.default_rng(20)
    for _ in range(20):
        depth, divisor, M = int(rng.integers(1, 7)), int(rng.integers(1, 9)), int(rng.integers(1, 10))
        L = int(rng.integers(2 ** (depth - 1) + 2, 260))
        out = quant_transform(np.zeros((1, L, M)), QuantConfig(depth, divisor))
        assert out.shape == (1, quant_column_count(L, M, depth, divisor))


@given(st.integers(0, 2**31), st.integers(32, 120))
def test_quant_within_interval_range(seed, L):
    from motiongate.features.quant import intervals, quantile_levels

    x = np.random.default_rng(seed).normal(size=(1, L, 1))
    out = quant_transform(x, QuantConfig(6, 4, ("raw",)))[0]
    col = 0
    for a, b in intervals(L, 6):
        q = len(quantile_levels(b - a, 4))
        seg = x[0, a:b, 0]
        assert np.all((out[col:col + q] >= seg.min()) & (out[col:col + q] <= seg.max()))
        col += q
    assert col == len(out)


def test_quant_too_short():
    with pytest.raises(QuantLengthError):
        quant_transform(np.zeros((1, 31, 1)), QuantConfig(depth=6))


# ---------------------------------------------------------------------------
# flatten

def test_flatten_examples():
    assert flatten_raw(np.array([[[1, 2], [3, 4]]])).tolist() == [[1, 3, 2, 4]]
    assert flatten_raw(np.zeros((1, 200, 9))).shape == (1, 1800)
    x = np.random.default_rng(0).normal(size=(1, 20, 3))
    rows = flatten_raw(np.concatenate([x, x]))
    np.testing.assert_array_equal(rows[0], rows[1])


# ---------------------------------------------------------------------------
# power transform

def test_power_standard_normal_lambda_near_one():
    x = np.random.default_rng(7).standard_normal((5000, 1))
    params = power_transform_fit(x)
    assert abs(params.lambdas[0] - 1.0) < 0.1
    assert np.max(np.abs(power_transform_apply(x, params) - x)) < 0.25


def test_power_constant_column_zero():
    x = np.column_stack([np.full(50, 4.2), np.random.default_rng(1).normal(size=50)])
    out = power_transform_apply(x, power_transform_fit(x))
    assert np.all(out[:, 0] == 0)


@given(st.integers(0, 2**31), st.integers(10, 200))
def test_power_standardization_contract(seed, n):
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.exponential(size=n), rng.normal(3, 2, size=n), rng.uniform(-5, 1, size=n)])
    out = power_transform_apply(x, power_transform_fit(x))
    assert np.all(np.abs(out.mean(axis=0)) < 1e-8)
    assert np.all(np.abs(out.var(axis=0) - 1) < 1e-6)


def test_power_skew_reduced():
    x = np.random.default_rng(2).lognormal(size=(3000, 1))
    params = power_transform_fit(x)
    assert params.lambdas[0] < 0.5
    out = power_transform_apply(x, params)[:, 0]
    skew = np.mean(out ** 3)
    assert abs(skew) < 0.2


# ---------------------------------------------------------------------------
# featurizer persistence

@pytest.mark.parametrize("kind", ["series", "raw", "quant", "kernel"])
def test_featurizer_restore(kind):
    f = Featurizer.build(kind, (64, 3), n_kernels=16, seed=5)
    g = Featurizer.restore(f.header(), f.arrays())
    X = np.random.default_rng(0).normal(size=(4, 64, 3))
    np.testing.assert_array_equal(f.transform(X), g.transform(X))
