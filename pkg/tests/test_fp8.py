import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muslab import fp8
from muslab.autograd import Tape, Tensor, backward
from muslab.autograd import ops
from muslab.fp8 import E4M3, E5M2, BF16, _fallback
from oracles import E4M3_DEF, E5M2_DEF, brute_force_round, enumerate_format

DEFS = [(E4M3, E4M3_DEF), (E5M2, E5M2_DEF)]


def _as_float(v):
    if v == "nan":
        return math.nan
    if v == "+inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return float(v)


@pytest.mark.parametrize("fmt,defn", DEFS, ids=["e4m3", "e5m2"])
def test_decode_matches_bit_layout_oracle(fmt, defn):
    oracle = enumerate_format(defn)
    table = fp8.decode_table(fmt)
    for code, v in oracle.items():
        got = table[code]
        want = _as_float(v)
        if math.isnan(want):
            assert math.isnan(got), code
        else:
            assert got == want, code


@pytest.mark.parametrize("fmt,defn", DEFS, ids=["e4m3", "e5m2"])
def test_extremes_come_from_enumeration(fmt, defn):
    finite = [v for v in enumerate_format(defn).values() if not isinstance(v, str)]
    assert fmt.max_finite == float(max(finite))
    assert fmt.min_subnormal == float(min(v for v in finite if v > 0))


def test_reported_extremes():
    assert fp8.decode(0x7E, E4M3) == 448.0
    assert fp8.decode(0x7B, E5M2) == 57344.0
    assert fp8.decode(0, E4M3) == 0.0
    assert math.isnan(fp8.decode(0x7F, E4M3))
    assert math.isinf(fp8.decode(0x7C, E5M2))
    assert E4M3.exponent_bits + E4M3.mantissa_bits == 7
    assert E5M2.exponent_bits + E5M2.mantissa_bits == 7


@pytest.mark.parametrize("fmt", [E4M3, E5M2], ids=["e4m3", "e5m2"])
def test_roundtrip_all_codes(fmt):
    for code in range(256):
        v = fp8.decode(code, fmt)
        if math.isnan(v):
            continue
        back = fp8.encode(v, fmt, clip=False)
        assert back.bits == code, (code, v, back.bits)
        if math.isfinite(v):
            assert fp8.decode(fp8.encode(v, fmt)) == v


def test_encode_examples():
    assert fp8.encode(500.0, E4M3).value == 448.0
    assert fp8.encode(1.0625, E4M3).value == 1.0
    assert fp8.encode(1.1875, E4M3).value == 1.25  # tie between 1.125 and 1.25 -> even
    assert fp8.encode(0.0, E5M2).bits == 0
    assert fp8.encode(-500.0, E4M3).value == -448.0


def test_overflow_without_clip():
    assert math.isnan(fp8.encode(500.0, E4M3, clip=False).value)
    assert fp8.encode(1e6, E5M2, clip=False).value == math.inf
    assert fp8.encode(-1e6, E5M2, clip=False).value == -math.inf
    assert fp8.encode(1e6, E5M2, clip=True).value == 57344.0
    # rounds down onto max rather than overflowing
    assert fp8.encode(460.0, E4M3, clip=False).value == 448.0


def test_underflow_to_zero():
    assert fp8.encode(E4M3.min_subnormal / 4, E4M3).value == 0.0
    assert fp8.encode(E4M3.min_subnormal / 2, E4M3).value == 0.0  # tie -> even (zero)
    assert fp8.encode(E4M3.min_subnormal * 0.51, E4M3).value == E4M3.min_subnormal
    assert fp8.encode(-E5M2.min_subnormal / 4, E5M2).bits == 0x80


@pytest.mark.parametrize("fmt,defn", DEFS, ids=["e4m3", "e5m2"])
def test_rounding_is_nearest_by_brute_force(fmt, defn):
    rng = np.random.default_rng(7)
    mags = np.exp(rng.uniform(np.log(fmt.min_subnormal / 8), np.log(fmt.max_finite), 400))
    xs = np.concatenate([mags * rng.choice([-1, 1], mags.size)])
    # exact midpoints are where tie-breaking matters
    vals = np.unique(fp8.decode_table(fmt)[np.isfinite(fp8.decode_table(fmt))])
    mids = (vals[1:] + vals[:-1]) / 2
    xs = np.concatenate([xs, rng.choice(mids, 200)])
    got = fp8.quantize(xs, fmt)
    for x, g in zip(xs, got):
        assert g == float(brute_force_round(float(x), defn)), x


def test_quantize_tensor_examples():
    t = Tensor([448.0, 500.0, -1000.0])
    assert fp8.quantize_tensor(t, E4M3).data.tolist() == [448.0, 448.0, -448.0]
    assert np.all(fp8.quantize_tensor(np.zeros((3, 4)), E4M3) == 0)
    finite = fp8.decode_table(E4M3)[np.isfinite(fp8.decode_table(E4M3))]
    np.testing.assert_array_equal(fp8.quantize_tensor(finite, E4M3), finite)


def test_straight_through_gradient():
    w = Tensor(np.array([[0.3, -2.0], [7.7, 460.0]]), requires_grad=True)
    with Tape():
        loss = ops.sum(fp8.quantize_tensor(w, E4M3))
    backward(loss)
    # ones inside the clip range, zero where |w| > 448
    np.testing.assert_array_equal(w.grad, [[1.0, 1.0], [1.0, 0.0]])
    w2 = Tensor(np.random.default_rng(0).standard_normal((2, 2)), requires_grad=True)
    with Tape():
        loss = ops.sum(fp8.quantize_tensor(w2, E4M3))
    backward(loss)
    np.testing.assert_array_equal(w2.grad, np.ones((2, 2)))


def test_clip_cast_transpose():
    x = np.array([[1.0, 2.0, 3.0], [0.5, -4.0, 6.0]])
    np.testing.assert_array_equal(fp8.clip_cast_transpose(x, E4M3), x.T)
    y = np.array([[1.0, 500.0, 3.0], [0.5, -4.0, 6.0]])
    out = fp8.clip_cast_transpose(y, E4M3)
    assert out.shape == (3, 2) and out[1, 0] == 448.0
    r = np.random.default_rng(1).standard_normal((5, 7)) * 100
    np.testing.assert_array_equal(
        fp8.clip_cast_transpose(fp8.clip_cast_transpose(r, E4M3), E4M3), fp8.quantize_tensor(r, E4M3)
    )
    with pytest.raises(ValueError):
        fp8.clip_cast_transpose(np.zeros(3), E4M3)


def test_underflow_fraction_examples():
    assert fp8.underflow_fraction(np.full(100, E4M3.min_subnormal / 4), E4M3) == 1.0
    assert fp8.underflow_fraction(np.ones(100), E4M3) == 0.0
    assert fp8.underflow_fraction(np.zeros(10), E4M3) == 0.0
    # 2 of the 3 nonzero entries vanish
    assert fp8.underflow_fraction(np.array([0.0, 1e-5, -1e-5, 1.0]), E4M3) == pytest.approx(2 / 3)


def test_gelu_underflows_more_than_relu():
    from scipy.special import erf

    x = np.random.default_rng(0).standard_normal(1_000_000)
    gelu = 0.5 * x * (1 + erf(x / np.sqrt(2)))
    relu = np.maximum(x, 0)
    assert fp8.underflow_fraction(gelu, E4M3) > fp8.underflow_fraction(relu, E4M3)


def test_bf16_grid():
    assert BF16.max_finite == (2 - 2**-7) * 2.0**127
    assert fp8.quantize(np.array([1.0 + 2**-8]), BF16)[0] == 1.0  # tie -> even
    assert fp8.quantize(np.array([1.0 + 3 * 2**-8]), BF16)[0] == 1.0 + 2**-6
    x = np.random.default_rng(2).standard_normal(1000)
    np.testing.assert_array_equal(
        fp8.quantize(x, BF16),
        # float32 rounding of a bf16-truncated mantissa is exact
        fp8.quantize(fp8.quantize(x, BF16), BF16),
    )
    assert np.max(np.abs(fp8.quantize(x, BF16) - x) / np.abs(x)) <= 2.0**-8


def test_backends_agree():
    rng = np.random.default_rng(3)
    x = np.concatenate(
        [
            rng.standard_normal(5000) * 10.0 ** rng.uniform(-6, 5, 5000),
            [0.0, -0.0, np.nan, np.inf, -np.inf, 1e300, -1e-300],
        ]
    )
    for fmt in (E4M3, E5M2, BF16):
        for clip in (True, False):
            args = (fmt.mantissa_bits, fmt.min_exponent, fmt.max_finite, clip, fmt.overflow_value)
            ref, nz_ref, fl_ref = _fallback.quantize_count(x, *args)
            got, nz, fl = fp8.backend.quantize_count(x, *args)
            np.testing.assert_array_equal(np.signbit(got), np.signbit(ref))
            np.testing.assert_array_equal(got, ref)
            assert (nz, fl) == (nz_ref, fl_ref)


finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(finite_floats, finite_floats, st.sampled_from([E4M3, E5M2]))
def test_monotone(x, y, fmt):
    lo, hi = min(x, y), max(x, y)
    assert fp8.encode(lo, fmt).value <= fp8.encode(hi, fmt).value


@settings(max_examples=300, deadline=None)
@given(finite_floats, st.sampled_from([E4M3, E5M2]))
def test_clip_bounds_magnitude(x, fmt):
    assert abs(fp8.encode(x, fmt).value) <= fmt.max_finite


@settings(max_examples=100, deadline=None)
@given(st.lists(finite_floats, min_size=1, max_size=50))
def test_underflow_sign_invariant(xs):
    a = np.array(xs)
    assert fp8.underflow_fraction(a, E4M3) == fp8.underflow_fraction(-a, E4M3)
