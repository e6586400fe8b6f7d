"""Training loop, metrics persistence and run manifests."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from muslab.autograd import Tape, backward
from muslab.model import (
    SITE_KINDS,
    ModelConfig,
    Parametrization,
    Precision,
    Probe,
    init_params,
    lm_loss,
    save_checkpoint,
)
from muslab.optim import Lion, Schedule, Scheme, schedule_lr
from muslab.train.data import Dataset

FINAL_WINDOW = 10
DIVERGENCE_PATIENCE = 100


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a run.

    ``d_base`` is the width the learning rate and weight decay were tuned
    at; ``None`` means the model's own width (no transfer). ``warmup_steps``
    of ``None`` uses 1% of ``steps``. ``loss_scale`` multiplies the summed
    token loss before backward; Lion ignores the gradient scale, so it only
    moves gradients away from the E5M2 underflow threshold.
    ``transfer_scheme`` overrides which width rule (``"sp"`` or ``"mus"``)
    maps the base hyperparameters; by default it follows the parametrization.
    """

    model: ModelConfig = ModelConfig()
    steps: int = 2000
    batch_size: int = 32
    seq_len: int = 128
    lr: float = 2.0**-7
    wd: float = 0.0
    seed: int = 0
    d_base: int | None = None
    warmup_steps: int | None = None
    final_fraction: float = 0.1
    betas: tuple[float, float] = (0.9, 0.99)
    loss_scale: float = 1.0
    log_every: int = 1
    data_seed: int | None = None
    transfer_scheme: str | None = None

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.seq_len < 2:
            raise ValueError("steps and batch_size must be >= 1, seq_len >= 2")
        if self.lr < 0 or self.wd < 0:
            raise ValueError("lr and wd must be >= 0")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        object.__setattr__(self, "betas", tuple(self.betas))

    @property
    def schedule(self) -> Schedule:
        if self.warmup_steps is None:
            return Schedule.default(self.lr, self.steps)
        return Schedule(self.lr, self.steps, self.warmup_steps, self.final_fraction)

    def replace(self, **kw: Any) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["model"] = self.model.to_dict()
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class MetricsRecord:
    step: int
    train_loss: float
    lr: float
    residual_std: list[float]
    underflow: dict[str, float]
    wall_ms: float


@dataclass
class RunResult:
    final_loss: float
    diverged: bool
    steps_completed: int
    initial_loss: float
    records: list[MetricsRecord] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    out_dir: Path | None = None

    def underflow_series(self) -> dict[str, list[tuple[int, float]]]:
        """Per-site ``(step, fraction)`` series; empty when the run had no FP8 casts."""
        series: dict[str, list[tuple[int, float]]] = {}
        for r in self.records:
            for site, frac in r.underflow.items():
                series.setdefault(site, []).append((r.step, frac))
        return series

    def peak_underflow(self, kind: str = "ffn_out") -> float:
        vals = [f for site, s in self.underflow_series().items() if site.endswith("." + kind) for _, f in s]
        return max(vals) if vals else 0.0


def git_revision() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5, check=True
        )
        return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def underflow_sites(cfg: ModelConfig) -> list[str]:
    if cfg.precision is not Precision.FP8:
        return []
    return [f"layer{l}.{kind}" for l in range(cfg.depth) for kind in SITE_KINDS]


def underflow_monitor(probe: Probe, cfg: ModelConfig) -> dict[str, float]:
    """Underflow fraction of every hidden FP8 cast site seen by ``probe``.

    Empty for any precision other than FP8.
    """
    fracs = probe.underflow_fractions()
    return {site: fracs.get(site, 0.0) for site in underflow_sites(cfg)}


class _MetricsSink:
    """Append-only CSV of logged steps with a header fixed at creation."""

    def __init__(self, path: Path, cfg: ModelConfig):
        self.path = path
        self.sites = underflow_sites(cfg)
        self.header = (
            ["step", "train_loss", "lr"]
            + [f"residual_std.{i}" for i in range(cfg.depth + 1)]
            + [f"underflow.{s}" for s in self.sites]
        )
        fresh = not path.exists() or path.stat().st_size == 0
        self._fh = open(path, "a", newline="")
        self._w = csv.writer(self._fh)
        if fresh:
            self._w.writerow(self.header)

    def write(self, r: MetricsRecord) -> None:
        row = [r.step, repr(r.train_loss), repr(r.lr)] + [repr(s) for s in r.residual_std]
        row += [repr(r.underflow.get(s, 0.0)) for s in self.sites]
        self._w.writerow(row)

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()


def _batches(data: Dataset, cfg: TrainConfig) -> Iterator[np.ndarray]:
    seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
    for step in range(cfg.steps):
        yield data.batch(step, cfg.batch_size, seed)


def train(
    cfg: TrainConfig,
    data: Dataset,
    out_dir: str | Path | None = None,
    checkpoint: bool = False,
) -> RunResult:
    """Train with Lion on next-token cross entropy.

    Logged rows go to ``out_dir/metrics.csv`` as they are produced, and
    ``out_dir/manifest.json`` records the config, seed and git revision.
    A NaN loss, or a loss above twice the initial one for 100 consecutive
    steps, stops the run and sets ``diverged``.
    """
    mcfg = cfg.model
    if data.vocab_size != mcfg.vocab_size:
        raise ValueError(f"dataset vocab {data.vocab_size} != model vocab {mcfg.vocab_size}")
    if data.seq_len < cfg.seq_len:
        raise ValueError(f"dataset seq_len {data.seq_len} < train seq_len {cfg.seq_len}")
    params = init_params(mcfg, cfg.seed)
    if cfg.transfer_scheme is not None:
        scheme = Scheme(cfg.transfer_scheme)
    else:
        scheme = Scheme.MUS if mcfg.parametrization is Parametrization.MUS else Scheme.SP
    opt = Lion(params, cfg.lr, cfg.wd, scheme, d_base=cfg.d_base, d_model=mcfg.d_model, betas=cfg.betas)
    sched = cfg.schedule
    n_targets = cfg.batch_size * (cfg.seq_len - 1)

    sink = None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        sink = _MetricsSink(out / "metrics.csv", mcfg)
    started = time.time()

    losses: list[float] = []
    records: list[MetricsRecord] = []
    initial = math.nan
    over = 0
    diverged = False
    try:
        for step, batch in enumerate(_batches(data, cfg)):
            t0 = time.perf_counter()
            batch = batch[:, : cfg.seq_len]
            lr_scale = schedule_lr(sched, step) / cfg.lr if cfg.lr > 0 else 0.0
            probe = Probe()
            with Tape():
                loss = lm_loss(batch, params, mcfg, probe)
            value = loss.item()
            if math.isfinite(value):
                backward(loss, cfg.loss_scale * n_targets)
                opt.step(lr_scale)
            opt.zero_grad()
            losses.append(value)
            if step == 0:
                initial = value
            wall = (time.perf_counter() - t0) * 1e3
            if step % cfg.log_every == 0 or step == cfg.steps - 1 or not math.isfinite(value):
                rec = MetricsRecord(
                    step, value, cfg.lr * lr_scale, list(probe.residual_std), underflow_monitor(probe, mcfg), wall
                )
                records.append(rec)
                if sink is not None:
                    sink.write(rec)
            if not math.isfinite(value):
                diverged = True
                break
            over = over + 1 if value > 2.0 * initial else 0
            if over >= DIVERGENCE_PATIENCE:
                diverged = True
                break
    finally:
        if sink is not None:
            sink.close()

    tail = losses[-FINAL_WINDOW:]
    final = float(np.mean(tail)) if tail and all(math.isfinite(v) for v in tail) else math.nan
    result = RunResult(final, diverged, len(losses), initial, records, losses, out)
    if out is not None:
        manifest = dict(
            config=cfg.to_dict(),
            seed=cfg.seed,
            git_revision=git_revision(),
            started_unix=started,
            finished_unix=time.time(),
            mean_step_ms=float(np.mean([r.wall_ms for r in records])) if records else 0.0,
            final_loss=final if math.isfinite(final) else None,
            diverged=diverged,
            steps_completed=len(losses),
        )
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
        if checkpoint:
            save_checkpoint(out / "checkpoint", params, mcfg)
    return result


def _json_default(o):
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
