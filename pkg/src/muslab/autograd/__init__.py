"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from muslab.autograd.tensor import Node, Tape, Tensor, active_tape, as_tensor, backward
from muslab.autograd import ops
from muslab.autograd.ops import (
    QuantSpec,
    activation,
    cross_entropy,
    embedding,
    layernorm,
    matmul,
    quantize,
    quantized_matmul,
    softmax_rows,
    sqrt_softmax_rows,
)

__all__ = [
    "Node",
    "QuantSpec",
    "Tape",
    "Tensor",
    "activation",
    "active_tape",
    "as_tensor",
    "backward",
    "cross_entropy",
    "embedding",
    "layernorm",
    "matmul",
    "ops",
    "quantize",
    "quantized_matmul",
    "softmax_rows",
    "sqrt_softmax_rows",
]
