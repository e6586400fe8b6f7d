"""Decoder-only transformer with SP and unit-scaled (MuS) arms."""

from muslab.model.config import (
    Attention,
    LNPlacement,
    ModelConfig,
    Parametrization,
    Precision,
    Residual,
    Role,
)
from muslab.model.params import ParamGroup, by_name, init_params, load_checkpoint, save_checkpoint
from muslab.model.transformer import (
    SITE_KINDS,
    Probe,
    attention_block,
    embed,
    ffn_block,
    forward_lm,
    linear_multiplier,
    lm_loss,
    residual_coefficients,
    residual_combine,
    scaled_linear,
    transformer_block,
)

__all__ = [
    "Attention",
    "LNPlacement",
    "ModelConfig",
    "ParamGroup",
    "Parametrization",
    "Precision",
    "Probe",
    "Residual",
    "Role",
    "SITE_KINDS",
    "attention_block",
    "by_name",
    "embed",
    "ffn_block",
    "forward_lm",
    "init_params",
    "linear_multiplier",
    "lm_loss",
    "load_checkpoint",
    "residual_coefficients",
    "residual_combine",
    "save_checkpoint",
    "scaled_linear",
    "transformer_block",
]
