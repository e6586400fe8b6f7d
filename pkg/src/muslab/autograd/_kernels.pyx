# cython: language_level=3
"""Compiled exact GELU forward with its derivative, fused in one pass."""

import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp

cnp.import_array()

cdef double _RSQRT2 = 0.7071067811865476
cdef double _RSQRT2PI = 0.3989422804014327


def gelu_with_grad(x):
    """Return ``(x * Phi(x), Phi(x) + x * phi(x))`` for a float64 array."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] src = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty_like(src)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dy = np.empty_like(src)
    cdef double[::1] sv = src
    cdef double[::1] yv = y
    cdef double[::1] dv = dy
    cdef Py_ssize_t i, n = src.shape[0]
    cdef double v, cdf
    with nogil:
        for i in range(n):
            v = sv[i]
            cdf = 0.5 * erfc(-v * _RSQRT2)
            yv[i] = v * cdf
            dv[i] = cdf + v * _RSQRT2PI * exp(-0.5 * v * v)
    shape = np.shape(x)
    return y.reshape(shape), dy.reshape(shape)
