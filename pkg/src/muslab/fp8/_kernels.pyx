# cython: language_level=3
"""Compiled round-to-nearest-even minifloat quantizer.

Mirrors muslab.fp8._fallback exactly; the two are checked against each other
in the test suite.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, copysign, isnan, INFINITY
from libc.stdint cimport uint64_t
from libc.string cimport memcpy

cnp.import_array()


cdef double _RNE_SHIFT = 4503599627370496.0  # 2**52


cdef inline double _pow2(int e) nogil:
    # exact 2**e for normal-range exponents, built from the bit pattern
    cdef uint64_t bits = <uint64_t>(e + 1023) << 52
    cdef double out
    memcpy(&out, &bits, 8)
    return out


cdef inline double _q(double x, int mbits, int emin, double max_finite,
                      bint clip, double overflow_value) nogil:
    cdef double a, r, t
    cdef uint64_t bits
    cdef int e
    if isnan(x):
        return x
    a = fabs(x)
    if a > max_finite:
        if clip:
            a = max_finite
        elif a == INFINITY:
            return copysign(overflow_value, x)
    memcpy(&bits, &a, 8)
    e = <int>((bits >> 52) & 0x7FF) - 1023
    if e < emin:
        e = emin
    # a scaled so one unit is the target spacing; adding 2**52 rounds it
    # to nearest-even in hardware, exact because t < 2**(mbits + 2)
    t = a * _pow2(mbits - e)
    t = (t + _RNE_SHIFT) - _RNE_SHIFT
    r = t * _pow2(e - mbits)
    if r > max_finite:
        r = overflow_value
    return copysign(r, x)


def quantize_array(x, int mbits, int emin, double max_finite, bint clip,
                   double overflow_value):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] src = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(src)
    cdef Py_ssize_t i, n = src.shape[0]
    cdef double[::1] sv = src
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _q(sv[i], mbits, emin, max_finite, clip, overflow_value)
    return out.reshape(np.shape(x))


def quantize_count(x, int mbits, int emin, double max_finite, bint clip,
                   double overflow_value):
    """Quantize and also return (nonzero_before, flushed_to_zero) counts."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] src = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(src)
    cdef Py_ssize_t i, n = src.shape[0]
    cdef Py_ssize_t nonzero = 0, flushed = 0
    cdef double v, r
    cdef double[::1] sv = src
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            v = sv[i]
            r = _q(v, mbits, emin, max_finite, clip, overflow_value)
            ov[i] = r
            if v != 0.0:
                nonzero += 1
                if r == 0.0:
                    flushed += 1
    return out.reshape(np.shape(x)), nonzero, flushed
