"""Bit-level encode/decode and value-level quantization for minifloat formats."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from muslab.fp8 import backend
from muslab.fp8.formats import FloatFormat, get_format


@dataclass(frozen=True)
class Fp8Code:
    bits: int
    format: FloatFormat

    def __post_init__(self) -> None:
        if not 0 <= self.bits < (1 << self.format.bits):
            raise ValueError(f"code {self.bits} out of range for {self.format}")

    @property
    def value(self) -> float:
        return decode(self)


def _decode_bits(bits: int, fmt: FloatFormat) -> float:
    m = fmt.mantissa_bits
    e_all = (1 << fmt.exponent_bits) - 1
    sign = -1.0 if bits >> (fmt.bits - 1) & 1 else 1.0
    exp_field = (bits >> m) & e_all
    mant = bits & ((1 << m) - 1)
    if exp_field == e_all:
        if fmt.has_inf:
            return sign * math.inf if mant == 0 else math.nan
        if mant == (1 << m) - 1:
            return math.nan
    if exp_field == 0:
        return sign * math.ldexp(mant, fmt.min_exponent - m)
    return sign * math.ldexp((1 << m) + mant, exp_field - fmt.exponent_bias - m)


@lru_cache(maxsize=None)
def decode_table(fmt: FloatFormat) -> np.ndarray:
    """Decoded value of every code, indexed by code. Only for 8-bit formats."""
    if fmt.bits != 8:
        raise ValueError(f"decode_table needs an 8-bit format, got {fmt}")
    table = np.array([_decode_bits(b, fmt) for b in range(256)], dtype=np.float64)
    table.setflags(write=False)
    return table


def nan_code(fmt: FloatFormat) -> int:
    return (1 << (fmt.bits - 1)) - 1


def decode(code: Fp8Code | int, fmt: FloatFormat | str | None = None) -> float:
    if isinstance(code, Fp8Code):
        return _decode_bits(code.bits, code.format)
    if fmt is None:
        raise TypeError("decode(int) needs a format")
    return _decode_bits(int(code), get_format(fmt))


def decode_array(codes, fmt: FloatFormat | str) -> np.ndarray:
    fmt = get_format(fmt)
    return decode_table(fmt)[np.asarray(codes, dtype=np.uint8)]


def quantize(x, fmt: FloatFormat | str, clip: bool = True) -> np.ndarray:
    """Round ``x`` to the nearest representable value (ties to even)."""
    fmt = get_format(fmt)
    return backend.quantize_array(
        x, fmt.mantissa_bits, fmt.min_exponent, fmt.max_finite, clip, fmt.overflow_value
    )


def quantize_with_underflow(x, fmt: FloatFormat | str, clip: bool = True):
    """``quantize`` plus (nonzero_count, flushed_count) from the same pass."""
    fmt = get_format(fmt)
    return backend.quantize_count(
        x, fmt.mantissa_bits, fmt.min_exponent, fmt.max_finite, clip, fmt.overflow_value
    )


def _values_to_codes(q: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    m = fmt.mantissa_bits
    sign = np.signbit(q).astype(np.int64) << (fmt.bits - 1)
    a = np.abs(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        _, e = np.frexp(a)
    e = e - 1
    normal = a >= fmt.min_normal
    exp_field = np.where(normal, e + fmt.exponent_bias, 0)
    mant_units = np.where(
        normal, np.ldexp(a, m - e) - (1 << m), np.ldexp(a, m - fmt.min_exponent)
    )
    finite = np.isfinite(a)
    mant_units = np.where(finite, mant_units, 0).astype(np.int64)
    exp_field = np.where(finite, exp_field, 0).astype(np.int64)
    codes = sign | (exp_field << m) | mant_units
    if fmt.has_inf:
        codes = np.where(np.isinf(a), sign | (((1 << fmt.exponent_bits) - 1) << m), codes)
    codes = np.where(np.isnan(a), nan_code(fmt), codes)
    return codes.astype(np.uint8 if fmt.bits == 8 else np.uint16)


def encode_array(x, fmt: FloatFormat | str, clip: bool = True) -> np.ndarray:
    fmt = get_format(fmt)
    return _values_to_codes(quantize(x, fmt, clip), fmt)


def encode(x: float, fmt: FloatFormat | str, clip: bool = True) -> Fp8Code:
    fmt = get_format(fmt)
    code = int(encode_array(np.array([x], dtype=np.float64), fmt, clip)[0])
    return Fp8Code(code, fmt)


def underflow_fraction(x, fmt: FloatFormat | str) -> float:
    """Fraction of nonzero elements that a clipped cast flushes to zero."""
    _, nonzero, flushed = quantize_with_underflow(x, fmt)
    return flushed / nonzero if nonzero else 0.0


def audit_rows(fmt: FloatFormat | str):
    """(code, bit string, decoded value, category) for every code."""
    fmt = get_format(fmt)
    m = fmt.mantissa_bits
    for code, value in enumerate(decode_table(fmt)):
        exp_field = (code >> m) & ((1 << fmt.exponent_bits) - 1)
        if math.isnan(value):
            kind = "nan"
        elif math.isinf(value):
            kind = "inf"
        elif value == 0:
            kind = "zero"
        elif exp_field == 0:
            kind = "subnormal"
        else:
            kind = "normal"
        yield code, format(code, "08b"), float(value), kind


def audit_csv(fmt: FloatFormat | str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["code", "bits", "value", "category"])
    for code, bits, value, kind in audit_rows(fmt):
        w.writerow([code, bits, repr(value), kind])
    return buf.getvalue()
