"""Model configuration: architecture arms and precision switches."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Any


class LNPlacement(str, Enum):
    PRE_LN = "pre_ln"
    RES_POST_LN = "res_post_ln"


class Attention(str, Enum):
    STANDARD = "standard"
    SQRT_SOFTMAX = "sqrt_softmax"


class Residual(str, Enum):
    STANDARD = "standard"
    FIXED = "fixed"
    RUNNING_MEAN = "running_mean"


class Parametrization(str, Enum):
    SP = "sp"
    MUS = "mus"


class Precision(str, Enum):
    FP64 = "fp64"
    BF16 = "bf16"
    FP8 = "fp8"


class Role(str, Enum):
    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT = "output"
    NORM = "norm"


_ENUM_FIELDS = {
    "ln_placement": LNPlacement,
    "attention": Attention,
    "residual": Residual,
    "parametrization": Parametrization,
    "precision": Precision,
}


@dataclass(frozen=True)
class ModelConfig:
    """Decoder-only transformer configuration.

    ``tau`` is only read by the fixed residual scheme; ``None`` picks it from
    the depth (see :func:`muslab.optim.select_tau`). ``sigma_init`` is only
    read under SP; ``None`` means ``1/sqrt(fan_in)`` per layer.
    ``output_mult`` is an extra multiplier on every hidden layer output,
    which is the ``a`` of the abc-parametrization.
    """

    d_model: int = 64
    depth: int = 4
    n_heads: int = 4
    vocab_size: int = 512
    ffn_ratio: int = 4
    ln_placement: LNPlacement = LNPlacement.RES_POST_LN
    attention: Attention = Attention.STANDARD
    residual: Residual = Residual.FIXED
    tau: float | None = None
    parametrization: Parametrization = Parametrization.MUS
    sigma_init: float | None = None
    precision: Precision = Precision.FP64
    activation: str = "gelu"
    pos_encoding: str = "none"
    max_seq_len: int = 1024
    final_ln: bool = True
    ln_eps: float = 1e-5
    output_mult: float = 1.0

    def __post_init__(self) -> None:
        for name, enum in _ENUM_FIELDS.items():
            object.__setattr__(self, name, enum(getattr(self, name)))
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.depth < 0 or self.d_model < 2 or self.vocab_size < 2:
            raise ValueError("depth must be >= 0, d_model and vocab_size >= 2")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.activation.lower() not in ("gelu", "silu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.pos_encoding not in ("none", "learned"):
            raise ValueError(f"pos_encoding must be 'none' or 'learned', got {self.pos_encoding!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_ffn(self) -> int:
        return self.ffn_ratio * self.d_model

    @property
    def resolved_tau(self) -> float:
        if self.tau is not None:
            return self.tau
        from muslab.optim.tau import select_tau

        return select_tau(max(self.depth, 1))

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        for name in _ENUM_FIELDS:
            out[name] = getattr(self, name).value
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def mus(cls, **kw: Any) -> "ModelConfig":
        """The unit-scaled arm: Res-Post-LN, fixed residual, unit init."""
        base = dict(
            ln_placement=LNPlacement.RES_POST_LN,
            residual=Residual.FIXED,
            parametrization=Parametrization.MUS,
        )
        base.update(kw)
        return cls(**base)

    @classmethod
    def sp(cls, **kw: Any) -> "ModelConfig":
        """The standard-parametrization baseline: Pre-LN, plain residual."""
        base = dict(
            ln_placement=LNPlacement.PRE_LN,
            residual=Residual.STANDARD,
            parametrization=Parametrization.SP,
        )
        base.update(kw)
        return cls(**base)
