"""Lion, learning-rate schedule, width-transfer rules and tau selection."""

from muslab.optim.transfer import Scheme, TransferRule, transfer
from muslab.optim.lion import Lion, LionState, lion_direction, lion_step
from muslab.optim.schedule import Schedule, schedule_lr
from muslab.optim.tau import TAU_ANCHORS, select_tau
from muslab.optim.abc import hidden_layer_trajectory

__all__ = [
    "Lion",
    "LionState",
    "Schedule",
    "Scheme",
    "TAU_ANCHORS",
    "TransferRule",
    "lion_direction",
    "lion_step",
    "schedule_lr",
    "select_tau",
    "transfer",
    "hidden_layer_trajectory",
]
