"""Learning-rate / weight-decay sweeps over widths and the width-transfer check."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from muslab.model import Parametrization, Role
from muslab.optim import Scheme, TransferRule, transfer
from muslab.train.data import Dataset
from muslab.train.loop import TrainConfig, train

OPTIMAL_TOLERANCE = 0.0025
TRANSFER_TOLERANCE = 0.005

SWEEP_HEADER = ["width", "lr", "wd", "final_loss", "diverged", "steps_completed"]


def _check_grid(name: str, grid: Sequence[float]) -> tuple[float, ...]:
    grid = tuple(float(v) for v in grid)
    if not grid:
        raise ValueError(f"{name} must be nonempty")
    for v in grid:
        if v != 0.0 and (v < 0 or not math.log2(v).is_integer()):
            raise ValueError(f"{name} entries must be powers of two (or 0), got {v}")
    return grid


@dataclass(frozen=True)
class SweepSpec:
    """Full (lr, wd) grid at every width, all other settings from ``fixed``.

    ``d_base`` is handed to every run, so under MuS the grid is read as
    base-width hyperparameters and the hidden-layer rule rescales them.
    ``None`` trains every width with the raw grid values.
    """

    lr_grid: Sequence[float]
    wd_grid: Sequence[float]
    widths: Sequence[int]
    fixed: TrainConfig = TrainConfig()
    d_base: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "lr_grid", _check_grid("lr_grid", self.lr_grid))
        object.__setattr__(self, "wd_grid", _check_grid("wd_grid", self.wd_grid))
        widths = tuple(int(w) for w in self.widths)
        if not widths or min(widths) < 1:
            raise ValueError("widths must be a nonempty list of positive integers")
        object.__setattr__(self, "widths", widths)

    def configs(self) -> list[TrainConfig]:
        out = []
        for w in self.widths:
            model = self.fixed.model.replace(d_model=w)
            for lr in self.lr_grid:
                for wd in self.wd_grid:
                    out.append(self.fixed.replace(model=model, lr=lr, wd=wd, d_base=self.d_base))
        return out


@dataclass(frozen=True)
class SweepRow:
    width: int
    lr: float
    wd: float
    final_loss: float
    diverged: bool
    steps_completed: int

    def csv_row(self) -> list:
        return [self.width, repr(self.lr), repr(self.wd), repr(self.final_loss), int(self.diverged), self.steps_completed]


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def for_width(self, width: int) -> list[SweepRow]:
        return [r for r in self.rows if r.width == width]

    def best(self, width: int) -> SweepRow | None:
        """Lowest final loss among non-divergent runs; ties go to the smaller lr, then wd."""
        ok = [r for r in self.for_width(width) if not r.diverged and math.isfinite(r.final_loss)]
        return min(ok, key=lambda r: (r.final_loss, r.lr, r.wd)) if ok else None

    def optimal_subset(self, width: int, tolerance: float = OPTIMAL_TOLERANCE) -> list[SweepRow]:
        b = self.best(width)
        if b is None:
            return []
        cut = b.final_loss * (1.0 + tolerance)
        return [r for r in self.for_width(width) if not r.diverged and r.final_loss <= cut]

    def widths(self) -> list[int]:
        return sorted({r.width for r in self.rows})

    def summary(self) -> dict:
        out = {}
        for w in self.widths():
            b = self.best(w)
            out[str(w)] = None if b is None else dict(
                lr=b.lr, wd=b.wd, final_loss=b.final_loss,
                optimal_subset=[(r.lr, r.wd) for r in self.optimal_subset(w)],
            )
        return out

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_HEADER)
            for r in self.rows:
                w.writerow(r.csv_row())


def _run_name(cfg: TrainConfig) -> str:
    return f"w{cfg.model.d_model}_lr{math.log2(cfg.lr):+g}_wd{'0' if cfg.wd == 0 else f'{math.log2(cfg.wd):+g}'}"


def _trial(args) -> SweepRow:
    cfg, data, out = args
    try:
        res = train(cfg, data, out)
        diverged, final, steps = res.diverged, res.final_loss, res.steps_completed
    except FloatingPointError:
        diverged, final, steps = True, math.nan, 0
    return SweepRow(cfg.model.d_model, cfg.lr, cfg.wd, final, diverged or not math.isfinite(final), steps)


def run_grid(
    configs: Iterable[TrainConfig],
    data: Dataset,
    out_dir: str | Path | None = None,
    workers: int | None = None,
    csv_name: str = "sweep.csv",
) -> SweepResult:
    """Train every config; rows are appended to ``out_dir/csv_name`` as they finish."""
    configs = list(configs)
    out = Path(out_dir) if out_dir is not None else None
    sink = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        sink = open(out / csv_name, "w", newline="")
        writer = csv.writer(sink)
        writer.writerow(SWEEP_HEADER)
        sink.flush()
    jobs = [(c, data, None if out is None else out / "runs" / _run_name(c)) for c in configs]
    done: dict[int, SweepRow] = {}

    def record(i: int, row: SweepRow) -> None:
        done[i] = row
        if sink is not None:
            writer.writerow(row.csv_row())
            sink.flush()

    try:
        if workers and workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {pool.submit(_trial, j): i for i, j in enumerate(jobs)}
                for f in as_completed(futs):
                    record(futs[f], f.result())
        else:
            for i, j in enumerate(jobs):
                record(i, _trial(j))
    finally:
        if sink is not None:
            sink.close()
    return SweepResult([done[i] for i in sorted(done)])


def sweep(spec: SweepSpec, data: Dataset, out_dir: str | Path | None = None, workers: int | None = None) -> SweepResult:
    res = run_grid(spec.configs(), data, out_dir, workers)
    if out_dir is not None:
        res.to_csv(Path(out_dir) / "sweep_sorted.csv")
        (Path(out_dir) / "summary.json").write_text(json.dumps(res.summary(), indent=2))
    return res


@dataclass
class TransferReport:
    scheme: str
    d_base: int
    d_new: int
    base_best: SweepRow | None
    transferred_lr: float
    transferred_wd: float
    transferred_loss: float
    wide_best: SweepRow | None
    gap: float
    passed: bool
    base: SweepResult
    wide: SweepResult

    def to_dict(self) -> dict:
        def row(r):
            return None if r is None else dict(lr=r.lr, wd=r.wd, final_loss=r.final_loss)

        return dict(
            scheme=self.scheme,
            d_base=self.d_base,
            d_new=self.d_new,
            base_best=row(self.base_best),
            transferred=dict(lr=self.transferred_lr, wd=self.transferred_wd, final_loss=self.transferred_loss),
            wide_best=row(self.wide_best),
            gap=self.gap,
            tolerance=TRANSFER_TOLERANCE,
            passed=self.passed,
        )


def transfer_check(
    d_base: int,
    d_new: int,
    scheme: Scheme | str,
    data: Dataset,
    template: TrainConfig,
    lr_grid: Sequence[float],
    wd_grid: Sequence[float],
    out_dir: str | Path | None = None,
    workers: int | None = None,
    rule: Scheme | str | None = None,
    wide_lr_grid: Sequence[float] | None = None,
) -> TransferReport:
    """Tune at ``d_base``, transfer to ``d_new``, and compare with a sweep at ``d_new``.

    ``scheme`` picks the parametrization of both models. ``rule`` picks the
    width rule used for the transfer (defaults to ``scheme``); passing the
    other rule gives the misuse control. The wide sweep reads its grid in
    the parametrization's own units: base-width units under MuS, raw values
    under SP. ``gap`` is the transferred loss relative to the wide optimum.
    """
    scheme = Scheme(scheme)
    rule = scheme if rule is None else Scheme(rule)
    if d_new < d_base:
        raise ValueError(f"d_new={d_new} must be >= d_base={d_base}")
    par = Parametrization.MUS if scheme is Scheme.MUS else Parametrization.SP
    model = template.model.replace(parametrization=par)
    template = template.replace(model=model)
    out = Path(out_dir) if out_dir is not None else None

    base_spec = SweepSpec(lr_grid, wd_grid, [d_base], template, d_base=d_base)
    base = sweep(base_spec, data, None if out is None else out / "base", workers)
    best = base.best(d_base)

    wide_d_base = d_base if scheme is Scheme.MUS else None
    wide_spec = SweepSpec(wide_lr_grid or lr_grid, wd_grid, [d_new], template, d_base=wide_d_base)
    wide = sweep(wide_spec, data, None if out is None else out / "wide", workers)
    wide_best = wide.best(d_new)

    if best is None:
        t_lr = t_wd = t_loss = gap = math.nan
        passed = False
    else:
        cfg = template.replace(model=model.replace(d_model=d_new), lr=best.lr, wd=best.wd,
                               d_base=d_base, transfer_scheme=rule.value)
        res = train(cfg, data, None if out is None else out / "transferred")
        t_lr, t_wd = transfer(TransferRule(d_base, d_new, best.lr, best.wd, rule), Role.HIDDEN)
        t_loss = res.final_loss if not res.diverged else math.nan
        if wide_best is None or not math.isfinite(t_loss):
            gap, passed = math.nan, False
        else:
            gap = t_loss / wide_best.final_loss - 1.0
            passed = gap <= TRANSFER_TOLERANCE
    report = TransferReport(scheme.value, d_base, d_new, best, t_lr, t_wd, t_loss, wide_best, gap, passed, base, wide)
    if out is not None:
        (out / "transfer_report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report
