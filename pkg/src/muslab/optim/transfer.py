"""Zero-shot hyperparameter transfer rules across model width."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from muslab.model.config import Role


class Scheme(str, Enum):
    SP = "sp"
    MUS = "mus"


@dataclass(frozen=True)
class TransferRule:
    d_base: int
    d_new: int
    lr_base: float
    wd_base: float
    scheme: Scheme = Scheme.MUS

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.d_base < 1 or self.d_new < 1:
            raise ValueError("widths must be >= 1")
        if self.lr_base < 0 or self.wd_base < 0:
            raise ValueError("learning rate and weight decay must be >= 0")


def transfer(rule: TransferRule, role: Role | str) -> tuple[float, float]:
    """(lr, wd) for a layer of ``role`` in the ``d_new``-wide model.

    MuS: hidden layers scale lr by sqrt(d_base / d_new), everything else is
    unchanged and weight decay is constant. SP: every layer scales lr by
    d_base / d_new and weight decay halves whenever the width changes.
    """
    role = Role(role)
    ratio = rule.d_base / rule.d_new
    if rule.scheme is Scheme.MUS:
        if role is Role.HIDDEN:
            return rule.lr_base * math.sqrt(ratio), rule.wd_base
        return rule.lr_base, rule.wd_base
    wd = rule.wd_base if rule.d_new == rule.d_base else 0.5 * rule.wd_base
    return rule.lr_base * ratio, wd
