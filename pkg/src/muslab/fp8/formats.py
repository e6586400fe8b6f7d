"""Small binary floating-point formats: E4M3, E5M2 and a BF16 rounding grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class FloatFormat:
    """Descriptor of a sign/exponent/mantissa float encoding.

    ``has_inf`` selects IEEE-style specials (all-ones exponent reserved for
    inf/NaN). Without it the format follows the OCP "fn" convention used by
    E4M3: the all-ones exponent holds normal numbers and only the all-ones
    mantissa in that binade is NaN.
    """

    name: str
    exponent_bits: int
    mantissa_bits: int
    exponent_bias: int
    has_inf: bool
    max_finite: float = field(init=False)
    min_subnormal: float = field(init=False)
    min_normal: float = field(init=False)

    def __post_init__(self) -> None:
        e_max_field = (1 << self.exponent_bits) - 1
        if self.has_inf:
            top_exp = e_max_field - 1 - self.exponent_bias
            top_mant = (1 << self.mantissa_bits) - 1
        else:
            top_exp = e_max_field - self.exponent_bias
            top_mant = (1 << self.mantissa_bits) - 2
        max_finite = math.ldexp(1.0 + top_mant / (1 << self.mantissa_bits), top_exp)
        object.__setattr__(self, "max_finite", max_finite)
        object.__setattr__(self, "min_normal", math.ldexp(1.0, self.min_exponent))
        object.__setattr__(
            self, "min_subnormal", math.ldexp(1.0, self.min_exponent - self.mantissa_bits)
        )

    @property
    def bits(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    @property
    def min_exponent(self) -> int:
        """Unbiased exponent of the smallest normal binade."""
        return 1 - self.exponent_bias

    @property
    def overflow_value(self) -> float:
        """What an unclipped overflow turns into."""
        return math.inf if self.has_inf else math.nan

    def __str__(self) -> str:
        return self.name


E4M3 = FloatFormat("E4M3", exponent_bits=4, mantissa_bits=3, exponent_bias=7, has_inf=False)
E5M2 = FloatFormat("E5M2", exponent_bits=5, mantissa_bits=2, exponent_bias=15, has_inf=True)
BF16 = FloatFormat("BF16", exponent_bits=8, mantissa_bits=7, exponent_bias=127, has_inf=True)

FORMATS = {f.name.lower(): f for f in (E4M3, E5M2, BF16)}


def get_format(name: str | FloatFormat) -> FloatFormat:
    if isinstance(name, FloatFormat):
        return name
    try:
        return FORMATS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown float format {name!r}; expected one of {sorted(FORMATS)}") from None
