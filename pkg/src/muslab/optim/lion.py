"""Lion with fully decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from muslab.model.config import Role
from muslab.model.params import ParamGroup
from muslab.optim.transfer import Scheme, TransferRule, transfer


@dataclass
class LionState:
    m: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.99

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError(f"betas must lie in (0, 1), got ({self.beta1}, {self.beta2})")

    @classmethod
    def zeros_like(cls, p: ParamGroup, beta1: float = 0.9, beta2: float = 0.99) -> "LionState":
        return cls(np.zeros_like(p.data), beta1, beta2)


def lion_direction(grad: np.ndarray, state: LionState) -> np.ndarray:
    """sign(beta1 * m + (1 - beta1) * g); sign(0) is 0."""
    return np.sign(state.beta1 * state.m + (1.0 - state.beta1) * grad)


def lion_step(p: ParamGroup, grad: np.ndarray, state: LionState, lr: float, wd: float) -> None:
    """In place: ``w <- w * (1 - wd) - lr * u``, then the momentum update.

    ``wd`` is not multiplied by ``lr``.
    """
    w = p.tensor.data
    if grad.shape != w.shape or state.m.shape != w.shape:
        raise ValueError(f"{p.name}: shape mismatch between weight {w.shape}, grad {grad.shape}, momentum {state.m.shape}")
    u = lion_direction(grad, state)
    if wd:
        w *= 1.0 - wd
    w -= lr * u
    state.m *= state.beta2
    state.m += (1.0 - state.beta2) * grad


@dataclass
class _Slot:
    param: ParamGroup
    state: LionState
    lr: float
    wd: float


@dataclass
class Lion:
    """Lion over a list of parameter groups with role-aware hyperparameters.

    Each group's peak learning rate and weight decay come from
    :func:`transfer` applied to ``(d_base -> d_model)``; norm parameters get
    no weight decay. ``step(scale)`` multiplies every group's peak rate by
    the schedule factor ``scale``.
    """

    params: Iterable[ParamGroup]
    lr: float
    wd: float = 0.0
    scheme: Scheme | str = Scheme.MUS
    d_base: int | None = None
    d_model: int | None = None
    betas: tuple[float, float] = (0.9, 0.99)
    slots: list[_Slot] = field(init=False)

    def __post_init__(self) -> None:
        self.params = list(self.params)
        self.scheme = Scheme(self.scheme)
        d_model = self.d_model or _infer_width(self.params)
        d_base = self.d_base or d_model
        rule = TransferRule(d_base, d_model, self.lr, self.wd, self.scheme)
        self.slots = []
        for p in self.params:
            lr, wd = transfer(rule, p.role)
            if p.role is Role.NORM:
                wd = 0.0
            self.slots.append(_Slot(p, LionState.zeros_like(p, *self.betas), lr, wd))

    def step(self, scale: float = 1.0) -> None:
        for s in self.slots:
            g = s.param.tensor.grad
            if g is None:
                continue
            lion_step(s.param, g, s.state, s.lr * scale, s.wd)

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None

    def group_hparams(self) -> dict[str, tuple[float, float]]:
        return {s.param.name: (s.lr, s.wd) for s in self.slots}


def _infer_width(params: list[ParamGroup]) -> int:
    for p in params:
        if p.name == "embed":
            return p.data.shape[1]
    for p in params:
        if p.role is Role.HIDDEN:
            return p.fan_in
    raise ValueError("cannot infer model width; pass d_model")
