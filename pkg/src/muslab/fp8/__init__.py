"""Software emulation of FP8 (E4M3/E5M2) and a BF16 rounding grid."""

from muslab.fp8.formats import BF16, E4M3, E5M2, FORMATS, FloatFormat, get_format
from muslab.fp8.codec import (
    Fp8Code,
    audit_csv,
    audit_rows,
    decode,
    decode_array,
    decode_table,
    encode,
    encode_array,
    quantize,
    quantize_with_underflow,
    underflow_fraction,
)
from muslab.fp8.backend import BACKEND
from muslab.fp8.casting import clip_cast_transpose, quantize_tensor

Fp8Format = FloatFormat

__all__ = [
    "BACKEND",
    "BF16",
    "E4M3",
    "E5M2",
    "FORMATS",
    "FloatFormat",
    "Fp8Code",
    "Fp8Format",
    "audit_csv",
    "audit_rows",
    "clip_cast_transpose",
    "decode",
    "decode_array",
    "decode_table",
    "encode",
    "encode_array",
    "get_format",
    "quantize",
    "quantize_tensor",
    "quantize_with_underflow",
    "underflow_fraction",
]
