"""Data sources, the training loop, sweeps and transfer checks."""

from muslab.train.data import (
    Dataset,
    SyntheticMarkov,
    SyntheticZipf,
    TextFile,
    ingest,
    source_from_dict,
    source_to_dict,
)
from muslab.train.loop import (
    MetricsRecord,
    RunResult,
    TrainConfig,
    git_revision,
    train,
    underflow_monitor,
    underflow_sites,
)
from muslab.train.sweep import (
    OPTIMAL_TOLERANCE,
    TRANSFER_TOLERANCE,
    SweepResult,
    SweepRow,
    SweepSpec,
    TransferReport,
    run_grid,
    sweep,
    transfer_check,
)

__all__ = [
    "Dataset",
    "MetricsRecord",
    "OPTIMAL_TOLERANCE",
    "RunResult",
    "SweepResult",
    "SweepRow",
    "SweepSpec",
    "SyntheticMarkov",
    "SyntheticZipf",
    "TRANSFER_TOLERANCE",
    "TextFile",
    "TrainConfig",
    "TransferReport",
    "git_revision",
    "ingest",
    "run_grid",
    "source_from_dict",
    "source_to_dict",
    "sweep",
    "train",
    "transfer_check",
    "underflow_monitor",
    "underflow_sites",
]
