import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadequery import ConfigurationError, FormatError, ValidationError
from cascadequery.tensor import (
    ConvWeights,
    DenseTensor,
    conv2d,
    load_tensor,
    relu,
    save_tensor,
    sigmoid_array,
)


def conv_oracle(x, w, b):
    """Zero-padded 3x3 (or 1x1) convolution, written as the four nested loops
    it is defined by, accumulated in float64."""
    out_c, in_c, k, _ = w.shape
    _, h, wd = x.shape
    r = k // 2
    out = np.zeros((out_c, h, wd), dtype=np.float64)
    for o in range(out_c):
        acc = np.full((h, wd), float(b[o]), dtype=np.float64)
        for c in range(in_c):
            for ky in range(k):
                for kx in range(k):
                    for y in range(h):
                        for xx in range(wd):
                            sy, sx = y + ky - r, xx + kx - r
                            if 0 <= sy < h and 0 <= sx < wd:
                                acc[y, xx] += float(w[o, c, ky, kx]) * float(x[c, sy, sx])
        out[o] = acc
    return out


def random_case(rng, out_c, in_c, h, w, k=3):
    x = rng.standard_normal((in_c, h, w)).astype(np.float32)
    ww = rng.standard_normal((out_c, in_c, k, k)).astype(np.float32)
    b = rng.standard_normal(out_c).astype(np.float32)
    return x, ww, b


@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (2, 3, 4, 5), (3, 2, 7, 3), (4, 4, 5, 5)])
def test_conv2d_matches_loop_oracle(shape):
    out_c, in_c, h, w = shape
    rng = np.random.default_rng(shape)
    x, ww, b = random_case(rng, out_c, in_c, h, w)
    got = conv2d(DenseTensor(x), ConvWeights(ww, b)).values
    want = conv_oracle(x, ww, b)
    assert got.shape == (out_c, h, w)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_conv2d_1x1_matches_oracle():
    rng = np.random.default_rng(11)
    x, ww, b = random_case(rng, 3, 2, 4, 6, k=1)
    got = conv2d(DenseTensor(x), ConvWeights(ww, b)).values
    np.testing.assert_allclose(got, conv_oracle(x, ww, b), rtol=1e-5, atol=1e-5)


def test_conv2d_delta_kernel_is_identity():
    # a kernel that is 1 at its center tap and 0 elsewhere copies the input
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 5, 7)).astype(np.float32)
    ww = np.zeros((2, 2, 3, 3), dtype=np.float32)
    ww[0, 0, 1, 1] = 1.0
    ww[1, 1, 1, 1] = 1.0
    got = conv2d(DenseTensor(x), ConvWeights(ww, np.zeros(2, dtype=np.float32)))
    np.testing.assert_array_equal(got.values, x)


def test_conv2d_is_linear_in_the_input():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((3, 6, 6)).astype(np.float32)
    b = rng.standard_normal((3, 6, 6)).astype(np.float32)
    ww = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
    zero_bias = ConvWeights(ww, np.zeros(2, dtype=np.float32))
    lhs = conv2d(DenseTensor(a + b), zero_bias).values
    rhs = conv2d(DenseTensor(a), zero_bias).values + conv2d(DenseTensor(b), zero_bias).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-4, atol=1e-5)


def test_conv2d_shift_equivariance_in_the_interior():
    rng = np.random.default_rng(5)
    x = np.zeros((1, 9, 9), dtype=np.float32)
    x[:, 2:5, 2:5] = rng.standard_normal((1, 3, 3)).astype(np.float32)
    ww = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
    w = ConvWeights(ww, np.zeros(1, dtype=np.float32))
    base = conv2d(DenseTensor(x), w).values
    shifted = conv2d(DenseTensor(np.roll(x, (2, 1), axis=(1, 2))), w).values
    np.testing.assert_allclose(shifted[:, 3:8, 2:7], base[:, 1:6, 1:6], rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(
    out_c=st.integers(1, 3),
    in_c=st.integers(1, 3),
    h=st.integers(1, 6),
    w=st.integers(1, 6),
    seed=st.integers(0, 2**16),
)
def test_conv2d_oracle_property(out_c, in_c, h, w, seed):
    rng = np.random.default_rng(seed)
    x, ww, b = random_case(rng, out_c, in_c, h, w)
    got = conv2d(DenseTensor(x), ConvWeights(ww, b)).values
    np.testing.assert_allclose(got, conv_oracle(x, ww, b), rtol=1e-4, atol=1e-4)


def test_conv2d_rejects_channel_mismatch():
    x = np.zeros((2, 3, 3), dtype=np.float32)
    ww = np.zeros((1, 3, 3, 3), dtype=np.float32)
    with pytest.raises(ConfigurationError):
        conv2d(DenseTensor(x), ConvWeights(ww, np.zeros(1, dtype=np.float32)))


def test_conv2d_rejects_non_finite_input():
    x = np.zeros((1, 3, 3), dtype=np.float32)
    x[0, 1, 1] = np.nan
    ww = np.zeros((1, 1, 3, 3), dtype=np.float32)
    with pytest.raises(ValidationError):
        conv2d(DenseTensor(x), ConvWeights(ww, np.zeros(1, dtype=np.float32)))


def test_relu_clamps_negatives_only():
    x = np.array([[[-1.5, 0.0], [2.0, -0.0]]], dtype=np.float32)
    out = relu(DenseTensor(x)).values
    np.testing.assert_array_equal(out, [[[0.0, 0.0], [2.0, 0.0]]])


def test_sigmoid_matches_float64_reference():
    x = np.linspace(-30, 30, 101, dtype=np.float32)
    want = (1.0 / (1.0 + np.exp(-x.astype(np.float64)))).astype(np.float32)
    np.testing.assert_array_equal(sigmoid_array(x), want)


def test_sigmoid_extremes_do_not_overflow():
    # exp(-1e4) underflowing to zero is the graceful saturation path, so only
    # overflow/invalid are promoted to errors here.
    x = np.array([-1e4, -88.0, 0.0, 88.0, 1e4], dtype=np.float32)
    with np.errstate(over="raise", invalid="raise"):
        out = sigmoid_array(x)
    assert out[0] == 0.0 and out[-1] == 1.0
    assert out[2] == 0.5
    assert np.all(np.isfinite(out)) and np.all((out >= 0.0) & (out <= 1.0))


def test_tensor_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(9)
    t = DenseTensor(rng.standard_normal((3, 4, 5)).astype(np.float32))
    p = tmp_path / "t.qdt"
    save_tensor(t, p)
    back = load_tensor(p)
    np.testing.assert_array_equal(back.values, t.values)


def test_load_tensor_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.qdt"
    p.write_bytes(b"NOTQDT1\n" + b"\x00" * 32)
    with pytest.raises(FormatError, match="magic"):
        load_tensor(p)


def test_load_tensor_rejects_truncated_payload(tmp_path):
    t = DenseTensor(np.ones((2, 3, 3), dtype=np.float32))
    p = tmp_path / "t.qdt"
    save_tensor(t, p)
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(FormatError):
        load_tensor(p)


def test_dense_tensor_rejects_bad_rank():
    with pytest.raises(ValidationError):
        DenseTensor(np.zeros((3, 3), dtype=np.float32))
