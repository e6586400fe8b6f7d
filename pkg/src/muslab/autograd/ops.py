"""Differentiable operations on :class:`~muslab.autograd.tensor.Tensor`.

Every op computes its forward result with numpy and, when any input needs a
gradient and a tape is active, records a closure that maps the output
gradient to one gradient per input.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from muslab.autograd import backend as _backend
from muslab.autograd.tensor import Tensor, active_tape, as_tensor
from muslab.fp8.codec import quantize_with_underflow
from muslab.fp8.formats import FloatFormat

def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw)


def axpby(x: Tensor, y: Tensor, a: float, b: float) -> Tensor:
    """``a * x + b * y`` for scalar coefficients, as one node."""
    sx, sy = x.shape, y.shape
    return _make(
        a * x.data + b * y.data, (x, y), lambda g: (_unbroadcast(a * g, sx), _unbroadcast(b * g, sy))
    )


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


# ---------------------------------------------------------------- activations


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    y, dy = _backend.gelu_with_grad(x.data)
    return _make(y, (x,), lambda g: (g * dy,))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return _make(xd * sig, (x,), lambda g: (g * sig * (1.0 + xd * (1.0 - sig)),))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    return _make(np.where(mask, xd, 0.0), (x,), lambda g: (g * mask,))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {"gelu": gelu, "silu": silu, "relu": relu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def index(x: Tensor, key) -> Tensor:
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[key] += g
        return (full,)

    return _make(x.data[key], (x,), bw)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.data, axis=axis), (x,), bw)


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return _make(np.mean(x.data), (x,), lambda g: (np.full(shape, float(g) / n),))


# ---------------------------------------------------------------- linear algebra


def _gemm(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    # a [..., k] against a shared 2-D b as one flat GEMM
    if b.ndim == 2 and a.ndim > 2:
        out = a.reshape(-1, a.shape[-1]) @ b
        out = out.reshape(a.shape[:-1] + (b.shape[1],))
    else:
        out = a @ b
    if alpha != 1.0:
        out *= alpha
    return out


def _weight_grad(a: np.ndarray, g: np.ndarray, alpha: float) -> np.ndarray:
    k, n = a.shape[-1], g.shape[-1]
    gw = a.reshape(-1, k).T @ g.reshape(-1, n)
    if alpha != 1.0:
        gw *= alpha
    return gw


def matmul(a: Tensor, b: Tensor, alpha: float = 1.0) -> Tensor:
    """``alpha * (a @ b)``; the same static ``alpha`` scales both gradients.

    ``b`` may be 2-D (shared weight) or carry the same batch dims as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _gemm(g, np.swapaxes(bd, -1, -2), alpha)
        if bd.ndim == 2:
            gb = _weight_grad(ad, g, alpha)
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
            if alpha != 1.0:
                gb *= alpha
            gb = _unbroadcast(gb, bd.shape)
        return _unbroadcast(ga, ad.shape), gb

    return _make(_gemm(ad, bd, alpha), (a, b), bw)


def quantize(x: Tensor, fmt: FloatFormat) -> Tensor:
    """Clipped round-to-nearest cast; gradient is straight-through.

    The gradient passes unchanged where ``|x| <= max_finite`` and is zero
    where the clip was active.
    """
    xd = x.data
    q, _, _ = quantize_with_underflow(xd, fmt)
    inside = np.abs(xd) <= fmt.max_finite
    return _make(q, (x,), lambda g: (g * inside,))


def _clip_mask(x: np.ndarray, fmt: FloatFormat) -> np.ndarray | None:
    inside = np.abs(x) <= fmt.max_finite
    return None if inside.all() else inside


class QuantSpec:
    """Cast formats for one linear layer: input, weight, incoming gradient."""

    __slots__ = ("x_fmt", "w_fmt", "g_fmt")

    def __init__(self, x_fmt: FloatFormat, w_fmt: FloatFormat, g_fmt: FloatFormat | None):
        self.x_fmt, self.w_fmt, self.g_fmt = x_fmt, w_fmt, g_fmt


def quantized_matmul(
    x: Tensor,
    w: Tensor,
    alpha: float,
    spec: QuantSpec,
    on_input: Callable[[int, int], None] | None = None,
) -> Tensor:
    """``alpha * Q(x) @ Q(w)`` with the output gradient cast before backward GEMMs.

    ``on_input(nonzero, flushed)`` receives the underflow counts of the input
    cast, which is how the underflow monitor observes each site.
    """
    if x.shape[-1] != w.shape[0] or w.ndim != 2:
        raise ValueError(f"matmul dimension mismatch: {x.shape} @ {w.shape}")
    xd, wd = x.data, w.data
    xq, nz, fl = quantize_with_underflow(xd, spec.x_fmt)
    if on_input is not None:
        on_input(nz, fl)
    wq, _, _ = quantize_with_underflow(wd, spec.w_fmt)
    out = _gemm(xq, wq, alpha)
    # straight-through masks, skipped when nothing was clipped
    x_in = _clip_mask(xd, spec.x_fmt)
    w_in = _clip_mask(wd, spec.w_fmt)

    def bw(g):
        if spec.g_fmt is not None:
            g, _, _ = quantize_with_underflow(g, spec.g_fmt)
        gx = _gemm(g, wq.T, alpha)
        gw = _weight_grad(xq, g, alpha)
        if x_in is not None:
            gx *= x_in
        if w_in is not None:
            gw *= w_in
        return gx, gw

    return _make(out, (x, w), bw)


# ---------------------------------------------------------------- normalization / attention


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-token normalization over the last axis followed by ``gain``/``bias``."""
    xd = x.data
    if xd.shape[-1] < 2:
        raise ValueError("layernorm needs at least 2 features")
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    d = xd.shape[-1]

    def bw(g):
        gxhat = g * gd
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat = g.reshape(-1, d)
        return gx, (flat * xhat.reshape(-1, d)).sum(axis=0), flat.sum(axis=0)

    return _make(out, (x, gain, bias), bw)


def _causal_mask(k: int) -> np.ndarray:
    return np.triu(np.ones((k, k), dtype=bool), 1)


def _softmax_forward(xd: np.ndarray, causal: bool) -> np.ndarray:
    if causal:
        if xd.shape[-1] != xd.shape[-2]:
            raise ValueError(f"causal softmax needs square trailing dims, got {xd.shape}")
        xd = np.where(_causal_mask(xd.shape[-1]), -np.inf, xd)
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(x: Tensor, causal: bool = False) -> Tensor:
    """Softmax over the last axis; with ``causal`` row i only sees columns <= i."""
    s = _softmax_forward(x.data, causal)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), bw)


def sqrt_softmax_rows(x: Tensor, causal: bool = False) -> Tensor:
    """Elementwise square root of :func:`softmax_rows`.

    The backward is written in terms of ``c = sqrt(s)`` so masked (zero)
    entries never divide by zero.
    """
    s = _softmax_forward(x.data, causal)
    c = np.sqrt(s)

    def bw(g):
        h = 0.5 * c * g
        return (h - s * h.sum(axis=-1, keepdims=True),)

    return _make(c, (x,), bw)


# ---------------------------------------------------------------- embedding / loss


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    n, d = table.shape

    def bw(g):
        gt = np.zeros((n, d))
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return _make(table.data[ids], (table,), bw)


def cross_entropy(logits: Tensor, targets: np.ndarray, reduction: str = "mean") -> Tensor:
    """Next-token cross entropy over the last axis of ``logits``."""
    targets = np.asarray(targets).reshape(-1)
    v = logits.shape[-1]
    z = logits.data.reshape(-1, v)
    if targets.shape[0] != z.shape[0]:
        raise ValueError(f"{targets.shape[0]} targets for {z.shape[0]} logit rows")
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[:, 0]
    rows = np.arange(z.shape[0])
    losses = lse - z[rows, targets]
    if reduction == "mean":
        scale = 1.0 / z.shape[0]
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    shape = logits.shape

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, targets] -= 1.0
        return ((float(g) * scale) * p.reshape(shape),)

    return _make(np.asarray(losses.sum() * scale), (logits,), bw)
