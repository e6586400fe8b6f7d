"""Picks the compiled GELU kernel when built; ``MUSLAB_BACKEND=python`` forces numpy."""

import os

from muslab.autograd import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("MUSLAB_BACKEND", "").lower() != "python":
    try:
        from muslab.autograd import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def gelu_with_grad(x):
    return _impl.gelu_with_grad(x)
