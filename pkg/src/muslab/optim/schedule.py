"""Linear-warmup cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Schedule:
    lr_max: float
    total_steps: int
    warmup_steps: int = 0
    final_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}")

    @classmethod
    def default(cls, lr_max: float, total_steps: int) -> "Schedule":
        """1% warmup, decay to 10% of the peak."""
        return cls(lr_max, total_steps, warmup_steps=min(total_steps - 1, total_steps // 100))


def schedule_lr(sched: Schedule, step: int) -> float:
    """Learning rate at ``step`` in ``[0, total_steps]``."""
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    if step < sched.warmup_steps:
        return sched.lr_max * step / sched.warmup_steps
    span = sched.total_steps - sched.warmup_steps
    progress = (step - sched.warmup_steps) / span
    f = sched.final_fraction
    return sched.lr_max * (f + (1.0 - f) * 0.5 * (1.0 + math.cos(math.pi * progress)))
