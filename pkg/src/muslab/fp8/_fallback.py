"""Pure-numpy minifloat quantizer; same signature as the compiled kernel."""

import numpy as np


def quantize_array(x, mbits, emin, max_finite, clip, overflow_value):
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    if clip:
        a = np.minimum(a, max_finite)
    _, e = np.frexp(a)
    e = np.maximum(e - 1, emin)
    r = np.ldexp(np.rint(np.ldexp(a, mbits - e)), e - mbits)
    if not clip:
        r = np.where(r > max_finite, overflow_value, r)
    return np.copysign(r, x)


def quantize_count(x, mbits, emin, max_finite, clip, overflow_value):
    x = np.asarray(x, dtype=np.float64)
    out = quantize_array(x, mbits, emin, max_finite, clip, overflow_value)
    nz = x != 0
    return out, int(np.count_nonzero(nz)), int(np.count_nonzero(nz & (out == 0)))
