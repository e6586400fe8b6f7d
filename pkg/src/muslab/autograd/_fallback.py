"""Numpy GELU with derivative; same signature as the compiled kernel."""

import math

import numpy as np
from scipy.special import erfc

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu_with_grad(x):
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * erfc(-x / _SQRT2)
    return x * cdf, cdf + x * (_INV_SQRT_2PI * np.exp(-0.5 * x * x))
