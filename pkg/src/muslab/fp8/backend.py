"""Selects the compiled quantizer when available, else the numpy one.

Set ``MUSLAB_BACKEND=python`` to force the fallback.
"""

import os

from muslab.fp8 import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("MUSLAB_BACKEND", "").lower() != "python":
    try:
        from muslab.fp8 import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def quantize_array(x, mbits, emin, max_finite, clip, overflow_value):
    return _impl.quantize_array(x, mbits, emin, max_finite, clip, overflow_value)


def quantize_count(x, mbits, emin, max_finite, clip, overflow_value):
    return _impl.quantize_count(x, mbits, emin, max_finite, clip, overflow_value)
