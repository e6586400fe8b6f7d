"""Tensor-level casts: quantize-dequantize and the fused clip/cast/transpose."""

from __future__ import annotations

import numpy as np

from muslab.autograd import ops
from muslab.autograd.tensor import Tensor
from muslab.fp8.codec import quantize
from muslab.fp8.formats import FloatFormat, get_format


def quantize_tensor(x, fmt: FloatFormat | str):
    """Clip to the format's range and round; shape is preserved.

    Tensors go through the differentiable straight-through op; plain arrays
    are returned as arrays.
    """
    fmt = get_format(fmt)
    if isinstance(x, Tensor):
        return ops.quantize(x, fmt)
    return quantize(x, fmt, clip=True)


def clip_cast_transpose(x, fmt: FloatFormat | str):
    """``quantize_tensor(x).T`` for a 2-D input, produced in one pass."""
    fmt = get_format(fmt)
    if isinstance(x, Tensor):
        if x.ndim != 2:
            raise ValueError(f"clip_cast_transpose needs a 2-D input, got shape {x.shape}")
        return ops.transpose(ops.quantize(x, fmt))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"clip_cast_transpose needs a 2-D input, got shape {x.shape}")
    return np.ascontiguousarray(quantize(x, fmt, clip=True).T)
