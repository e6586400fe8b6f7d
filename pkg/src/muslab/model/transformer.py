"""Unit-scaled decoder-only transformer built on the autograd ops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from muslab.autograd import Tensor, ops
from muslab.autograd.ops import QuantSpec
from muslab.fp8.formats import BF16, E4M3, E5M2
from muslab.model.config import (
    Attention,
    LNPlacement,
    ModelConfig,
    Parametrization,
    Precision,
    Residual,
    Role,
)
from muslab.model.params import ParamGroup, by_name

SITE_KINDS = ("attn_in", "attn_out", "ffn_in", "ffn_out")

_FP8_HIDDEN = QuantSpec(E4M3, E4M3, E5M2)
_BF16_ALL = QuantSpec(BF16, BF16, BF16)


@dataclass
class Probe:
    """Observables collected during one forward pass.

    ``residual_std[0]`` is the embedding output; entry ``l`` is the stream
    after layer ``l``. ``underflow`` maps a site name such as
    ``"layer0.ffn_out"`` to (nonzero, flushed) counts of its input cast.
    """

    attention: bool = False
    activations: bool = False
    residual_std: list[float] = field(default_factory=list)
    attn_position_std: list[np.ndarray] = field(default_factory=list)
    underflow: dict[str, tuple[int, int]] = field(default_factory=dict)
    block_values: dict[str, np.ndarray] = field(default_factory=dict)

    def site(self, name: str):
        def record(nonzero: int, flushed: int) -> None:
            nz, fl = self.underflow.get(name, (0, 0))
            self.underflow[name] = (nz + nonzero, fl + flushed)

        return record

    def underflow_fractions(self) -> dict[str, float]:
        return {k: (fl / nz if nz else 0.0) for k, (nz, fl) in self.underflow.items()}


def linear_multiplier(cfg: ModelConfig, p: ParamGroup) -> float:
    if p.role is Role.HIDDEN:
        base = 1.0 / math.sqrt(p.fan_in) if cfg.parametrization is Parametrization.MUS else 1.0
        return base * cfg.output_mult
    if p.role is Role.OUTPUT:
        return 1.0 / p.fan_in if cfg.parametrization is Parametrization.MUS else 1.0
    raise ValueError(f"{p.name}: scaled_linear needs a hidden or output layer, got role {p.role.value}")


def scaled_linear(
    x: Tensor, p: ParamGroup, cfg: ModelConfig, probe: Probe | None = None, site: str | None = None
) -> Tensor:
    """``alpha * x @ W`` with the role's static multiplier and precision.

    Hidden layers run through FP8 (E4M3 inputs/weights, E5M2 output
    gradients) under ``Precision.FP8``; the LM head stays on the BF16 grid.
    """
    alpha = linear_multiplier(cfg, p)
    if x.shape[-1] != p.tensor.shape[0]:
        raise ValueError(f"{p.name}: input width {x.shape[-1]} != fan_in {p.tensor.shape[0]}")
    if cfg.precision is Precision.FP64:
        return ops.matmul(x, p.tensor, alpha)
    if cfg.precision is Precision.FP8 and p.role is Role.HIDDEN:
        spec = _FP8_HIDDEN
    else:
        spec = _BF16_ALL
    hook = probe.site(site) if probe is not None and site is not None else None
    return ops.quantized_matmul(x, p.tensor, alpha, spec, hook)


def residual_combine(x: Tensor, branch: Tensor, cfg: ModelConfig, l: int) -> Tensor:
    """Merge a residual branch; ``l`` is the 1-based count of additions so far."""
    if x.shape != branch.shape:
        raise ValueError(f"residual shapes differ: {x.shape} vs {branch.shape}")
    a, b = residual_coefficients(cfg.residual, l, cfg.resolved_tau if cfg.residual is Residual.FIXED else None)
    if a == 1.0 and b == 1.0:
        return ops.add(x, branch)
    return ops.axpby(x, branch, a, b)


def residual_coefficients(scheme: Residual | str, l: int = 1, tau: float | None = None) -> tuple[float, float]:
    scheme = Residual(scheme)
    if scheme is Residual.STANDARD:
        return 1.0, 1.0
    if scheme is Residual.FIXED:
        if tau is None or not 0.0 < tau < 1.0:
            raise ValueError(f"fixed residual needs tau in (0, 1), got {tau}")
        return math.sqrt(1.0 - tau), math.sqrt(tau)
    if l < 1:
        raise ValueError(f"running-mean residual index must be >= 1, got {l}")
    return math.sqrt(l / (l + 1)), math.sqrt(1.0 / (l + 1))


def _ln(x: Tensor, P: Mapping[str, ParamGroup], prefix: str, cfg: ModelConfig) -> Tensor:
    return ops.layernorm(x, P[prefix + ".gain"].tensor, P[prefix + ".bias"].tensor, cfg.ln_eps)


def attention_block(
    x: Tensor, P: Mapping[str, ParamGroup], cfg: ModelConfig, l: int, probe: Probe | None = None
) -> Tensor:
    """Causal multi-head attention with hidden-layer projections."""
    b, t, d = x.shape
    h, dh = cfg.n_heads, cfg.d_head
    qkv = scaled_linear(x, P[f"h{l}.attn.qkv"], cfg, probe, f"layer{l}.attn_in")
    qkv = ops.reshape(qkv, (b, t, 3, h, dh))
    q = ops.transpose(qkv[:, :, 0], (0, 2, 1, 3))
    k = ops.transpose(qkv[:, :, 1], (0, 2, 3, 1))
    v = ops.transpose(qkv[:, :, 2], (0, 2, 1, 3))
    logits = ops.matmul(q, k, 1.0 / math.sqrt(dh))
    if cfg.attention is Attention.SQRT_SOFTMAX:
        probs = ops.sqrt_softmax_rows(logits, causal=True)
    else:
        probs = ops.softmax_rows(logits, causal=True)
    a = ops.matmul(probs, v)
    a = ops.reshape(ops.transpose(a, (0, 2, 1, 3)), (b, t, d))
    if probe is not None and probe.attention:
        probe.attn_position_std.append(a.data.std(axis=(0, 2)))
    return scaled_linear(a, P[f"h{l}.attn.out"], cfg, probe, f"layer{l}.attn_out")


def ffn_block(
    x: Tensor, P: Mapping[str, ParamGroup], cfg: ModelConfig, l: int, probe: Probe | None = None
) -> Tensor:
    hdn = scaled_linear(x, P[f"h{l}.ffn.up"], cfg, probe, f"layer{l}.ffn_in")
    hdn = ops.activation(hdn, cfg.activation)
    return scaled_linear(hdn, P[f"h{l}.ffn.down"], cfg, probe, f"layer{l}.ffn_out")


def transformer_block(
    x: Tensor, P: Mapping[str, ParamGroup], cfg: ModelConfig, l: int, probe: Probe | None = None
) -> Tensor:
    """One layer (0-based index ``l``): attention then FFN sub-blocks."""
    record = probe is not None and probe.activations
    for j, (fn, ln) in enumerate(((attention_block, "ln1"), (ffn_block, "ln2"))):
        kind = "attn" if j == 0 else "ffn"
        if cfg.ln_placement is LNPlacement.PRE_LN:
            inp = _ln(x, P, f"h{l}.{ln}", cfg)
            branch = fn(inp, P, cfg, l, probe)
        else:
            inp = x
            branch = _ln(fn(x, P, cfg, l, probe), P, f"h{l}.{ln}", cfg)
        if record:
            probe.block_values[f"layer{l}.{kind}.input"] = inp.data.ravel().copy()
            probe.block_values[f"layer{l}.{kind}.output"] = branch.data.ravel().copy()
        x = residual_combine(x, branch, cfg, 2 * l + j + 1)
    return x


def _as_batch(tokens) -> np.ndarray:
    ids = np.asarray(tokens)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"tokens must be a 1-D or 2-D integer array, got {ids.dtype} {ids.shape}")
    return ids


def embed(ids: np.ndarray, P: Mapping[str, ParamGroup], cfg: ModelConfig) -> Tensor:
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError(f"token ids must lie in [0, {cfg.vocab_size}), got range [{ids.min()}, {ids.max()}]")
    x = ops.embedding(P["embed"].tensor, ids)
    if cfg.pos_encoding == "learned":
        t = ids.shape[1]
        if t > cfg.max_seq_len:
            raise ValueError(f"sequence length {t} exceeds max_seq_len {cfg.max_seq_len}")
        pos = P["pos"].tensor[:t]
        x = ops.axpby(x, pos, *((math.sqrt(0.5),) * 2)) if cfg.parametrization is Parametrization.MUS else x + pos
    if cfg.precision is not Precision.FP64:
        x = ops.quantize(x, BF16)
    return x


def forward_lm(
    tokens, params: Iterable[ParamGroup] | Mapping[str, ParamGroup], cfg: ModelConfig, probe: Probe | None = None
) -> Tensor:
    """Logits of shape ``[batch, seq, vocab]`` (batch dim dropped for 1-D input)."""
    P = by_name(params)
    raw = np.asarray(tokens)
    ids = _as_batch(raw)
    x = embed(ids, P, cfg)
    if probe is not None:
        probe.residual_std.append(float(x.data.std()))
    for l in range(cfg.depth):
        x = transformer_block(x, P, cfg, l, probe)
        if probe is not None:
            probe.residual_std.append(float(x.data.std()))
    if cfg.final_ln:
        x = _ln(x, P, "ln_f", cfg)
    logits = scaled_linear(x, P["head"], cfg, probe, "head_in")
    if raw.ndim == 1:
        logits = logits[0]
    return logits


def lm_loss(
    batch: np.ndarray, params, cfg: ModelConfig, probe: Probe | None = None
) -> Tensor:
    """Mean next-token cross entropy over a ``[batch, seq_len]`` token array."""
    batch = _as_batch(batch)
    logits = forward_lm(batch[:, :-1], params, cfg, probe)
    return ops.cross_entropy(logits, batch[:, 1:])
