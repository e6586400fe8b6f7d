"""Command-line entry point: ``muslab <verb> ...``.

Config files are TOML::

    seed = 0                      # optional, same as --seed

    [model]                       # ModelConfig fields
    arm = "mus"                   # preset: "mus" or "sp" (optional)
    d_model = 64
    depth = 4
    precision = "fp64"            # fp64 | bf16 | fp8

    [train]                       # TrainConfig fields except ``model``
    steps = 2000
    batch_size = 32
    seq_len = 128
    lr = 0.0078125
    wd = 0.0
    d_base = 32

    [data]                        # kind = "markov" | "zipf" | "text"
    kind = "markov"
    vocab = 512
    num_sequences = 1048576       # optional pool size

    [sweep]                       # sweep and transfer-check only
    lr_exponents = [-8, -6, -4]   # or lr_grid = [...]
    wd_grid = [0.0]               # or wd_exponents = [...]
    widths = [32, 64, 128, 256]
    d_base = 32
    workers = 1

Precedence, lowest first: built-in defaults, the config file,
``--override section.key=value`` (value parsed as a TOML literal), then the
dedicated flags ``--lr --wd --tau --d-base --seed --precision``.
If ``model.vocab_size`` is not set it follows the dataset.

Exit codes: 0 success, 1 when every trained run diverged (results are still
written), 2 usage or config error, 130 on Ctrl-C after flushing partial CSVs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from muslab import fp8
from muslab.autograd import Tensor
from muslab.autograd.ops import ACTIVATIONS
from muslab.model import ModelConfig
from muslab.train import (
    SweepSpec,
    TrainConfig,
    ingest,
    source_from_dict,
    sweep,
    train,
    transfer_check,
)
from muslab.variance_lab import (
    IID,
    SimSpec,
    ZipfEmbedding,
    attention_variance_curve,
    predicted_softmax_var,
    residual_stream_profile,
    softmax_moments,
)

SECTIONS = ("model", "train", "data", "sweep")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- config


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path: str | None, overrides: Sequence[str] = ()) -> dict[str, Any]:
    """Read a TOML config into ``{"seed", "model", "train", "data", "sweep"}`` and apply overrides."""
    cfg: dict[str, Any] = {s: {} for s in SECTIONS}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"bad TOML in {path}: {exc}") from None
        for key, val in raw.items():
            if key in SECTIONS:
                if not isinstance(val, dict):
                    raise UsageError(f"[{key}] must be a table")
                cfg[key].update(val)
            elif key == "seed":
                cfg["seed"] = val
            else:
                raise UsageError(f"unknown top-level config key {key!r}")
    for item in overrides:
        key, sep, text = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or (section != "seed" and (not dot or section not in SECTIONS or not name)):
            raise UsageError(f"override {item!r} is not of the form section.key=value")
        if section == "seed":
            cfg["seed"] = _parse_value(text)
        else:
            cfg[section][name] = _parse_value(text)
    return cfg


def _apply_flags(cfg: dict[str, Any], args: argparse.Namespace) -> None:
    for flag, key in (("lr", "lr"), ("wd", "wd"), ("d_base", "d_base")):
        if getattr(args, flag, None) is not None:
            cfg["train"][key] = getattr(args, flag)
    if getattr(args, "tau", None) is not None:
        cfg["model"]["tau"] = args.tau
    if getattr(args, "precision", None) is not None:
        cfg["model"]["precision"] = args.precision
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed


def build_model(section: dict[str, Any], vocab: int | None = None) -> ModelConfig:
    section = dict(section)
    arm = section.pop("arm", "mus")
    if arm not in ("mus", "sp"):
        raise UsageError(f"model.arm must be 'mus' or 'sp', got {arm!r}")
    if vocab is not None:
        section.setdefault("vocab_size", vocab)
    return (ModelConfig.mus if arm == "mus" else ModelConfig.sp)(**section)


def build_run(cfg: dict[str, Any]):
    """``(TrainConfig, Dataset)`` from a loaded config."""
    data_opts = dict(cfg["data"])
    pool = int(data_opts.pop("num_sequences", 1 << 20))
    train_opts = dict(cfg["train"])
    if "model" in train_opts:
        raise UsageError("put model settings in [model], not [train]")
    seq_len = int(train_opts.get("seq_len", TrainConfig.seq_len))
    try:
        data = ingest(source_from_dict(data_opts), seq_len=seq_len, num_sequences=pool)
        model = build_model(cfg["model"], data.vocab_size)
        if "seed" in cfg:
            train_opts["seed"] = int(cfg["seed"])
        tcfg = TrainConfig.from_dict({**train_opts, "model": model})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    return tcfg, data


def _grid(section: dict[str, Any], name: str, default: list[float]) -> list[float]:
    if f"{name}_exponents" in section:
        return [2.0 ** int(e) for e in section[f"{name}_exponents"]]
    return [float(v) for v in section.get(f"{name}_grid", default)]


# ---------------------------------------------------------------- output


def _emit(text: str, out: str | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)
    print(f"wrote {path / name}")


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- verbs


def cmd_fp8_audit(args) -> int:
    _emit(fp8.audit_csv(args.format), args.out, f"fp8_audit_{args.format}.csv")
    return 0


def cmd_fp8_underflow(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    x = np.random.default_rng(args.seed).standard_normal(args.n)
    y = ACTIVATIONS[args.act](Tensor(x)).data
    rows = [[args.act, f, args.n, args.seed, repr(fp8.underflow_fraction(y, f))] for f in ("e4m3", "e5m2")]
    _emit(_csv_text(["act", "format", "n", "seed", "underflow_fraction"], rows), args.out,
          f"fp8_underflow_{args.act}.csv")
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_sim_attn(args) -> int:
    source = IID() if args.mode == "iid" else ZipfEmbedding(args.vocab, args.exponent)
    try:
        spec = SimSpec(args.k, args.trials, source, args.seed, args.dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = attention_variance_curve(spec, args.variant, workers=args.workers)
    _emit(res.to_csv(), args.out, f"attn_variance_{args.mode}_{args.variant}.csv")
    return 0


def cmd_sim_softmax(args) -> int:
    if args.k < 2 or args.trials < 2:
        raise UsageError("softmax-moments needs --k >= 2 and --trials >= 2")
    mean, var, cov = softmax_moments(args.k, args.trials, args.seed, workers=args.workers)
    e = math.e
    row = [args.k, args.trials, repr(mean), repr(1 / args.k), repr(var), repr(predicted_softmax_var(args.k)),
           repr(cov), repr(e * (e - 1))]
    header = ["k", "trials", "mean", "predicted_mean", "var", "predicted_var", "cov_nd", "predicted_cov_nd"]
    _emit(_csv_text(header, [row]), args.out, f"softmax_moments_k{args.k}.csv")
    return 0


def cmd_sim_residual(args) -> int:
    cfg = load_config(args.config, args.override)
    if args.arm is not None:
        cfg["model"]["arm"] = args.arm
    for flag, key in (("width", "d_model"), ("depth", "depth")):
        if getattr(args, flag) is not None:
            cfg["model"][key] = getattr(args, flag)
    _apply_flags(cfg, args)
    try:
        model = build_model(cfg["model"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid model config: {exc}") from None
    prof = residual_stream_profile(model, seed=int(cfg.get("seed", 0)))
    rows = [[i, repr(s)] for i, s in enumerate(prof.stds)]
    _emit(_csv_text(["layer", "residual_std"], rows), args.out, "residual_profile.csv")
    if args.out is not None:
        krows = [[site, repr(v)] for site, v in sorted(prof.kurtosis.items())]
        _emit(_csv_text(["site", "excess_kurtosis"], krows), args.out, "block_kurtosis.csv")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    _apply_flags(cfg, args)
    tcfg, data = build_run(cfg)
    res = train(tcfg, data, args.out, checkpoint=args.checkpoint)
    print(json.dumps(dict(final_loss=res.final_loss, diverged=res.diverged, steps_completed=res.steps_completed)))
    return 1 if res.diverged else 0


def _sweep_setup(args):
    cfg = load_config(args.spec, args.override)
    _apply_flags(cfg, args)
    tcfg, data = build_run(cfg)
    sw = cfg["sweep"]
    known = {"lr_grid", "lr_exponents", "wd_grid", "wd_exponents", "widths", "d_base", "workers", "rule"}
    if set(sw) - known:
        raise UsageError(f"unknown [sweep] keys: {sorted(set(sw) - known)}")
    return cfg, tcfg, data, sw


def cmd_sweep(args) -> int:
    _, tcfg, data, sw = _sweep_setup(args)
    try:
        spec = SweepSpec(
            _grid(sw, "lr", [tcfg.lr]),
            _grid(sw, "wd", [tcfg.wd]),
            sw.get("widths", [tcfg.model.d_model]),
            tcfg,
            d_base=sw.get("d_base", tcfg.d_base),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = sweep(spec, data, args.out, workers=args.workers or sw.get("workers"))
    print(json.dumps(res.summary(), indent=2))
    return 1 if all(r.diverged for r in res.rows) else 0


def cmd_transfer(args) -> int:
    _, tcfg, data, sw = _sweep_setup(args)
    if args.new < args.base:
        raise UsageError(f"--new {args.new} must be >= --base {args.base}")
    try:
        rep = transfer_check(
            args.base,
            args.new,
            args.scheme,
            data,
            tcfg,
            _grid(sw, "lr", [2.0**e for e in range(-10, -1, 2)]),
            _grid(sw, "wd", [0.0]),
            args.out,
            workers=args.workers or sw.get("workers"),
            rule=args.rule or sw.get("rule"),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(json.dumps(rep.to_dict(), indent=2))
    return 1 if not math.isfinite(rep.transferred_loss) else 0


# ---------------------------------------------------------------- report


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def build_report(runs: Path) -> dict[str, str]:
    """Figure tables (file name to CSV text) aggregated from every CSV under ``runs``."""
    loss, under, optima, var = [], [], [], []
    for path in sorted(runs.rglob("*.csv")):
        name = str(path.parent.relative_to(runs)) or "."
        rows = _read_csv(path)
        if not rows:
            continue
        cols = rows[0].keys()
        if path.name == "metrics.csv":
            for r in rows:
                loss.append([name, r["step"], r["train_loss"], r["lr"]])
                for c in cols:
                    if c.startswith("underflow."):
                        under.append([name, r["step"], c[len("underflow."):], r[c]])
        elif path.name == "sweep.csv":
            for w in sorted({int(r["width"]) for r in rows}):
                ok = [r for r in rows if int(r["width"]) == w and r["diverged"] == "0"]
                if not ok:
                    optima.append([name, w, "", "", "", 0])
                    continue
                best = min(ok, key=lambda r: (float(r["final_loss"]), float(r["lr"]), float(r["wd"])))
                cut = float(best["final_loss"]) * 1.0025
                n_opt = sum(float(r["final_loss"]) <= cut for r in ok)
                optima.append([name, w, best["lr"], best["wd"], best["final_loss"], n_opt])
        elif path.name.startswith("attn_variance_") and "measured_var" in cols:
            for r in rows:
                var.append([f"{name}/{path.stem}", r["k"], r["measured_var"], r["predicted_var"]])
    return {
        "loss_curves.csv": _csv_text(["run", "step", "train_loss", "lr"], loss),
        "underflow_vs_step.csv": _csv_text(["run", "step", "site", "underflow_fraction"], under),
        "optima_vs_width.csv": _csv_text(["sweep", "width", "lr_star", "wd_star", "final_loss", "n_optimal"], optima),
        "variance_vs_position.csv": _csv_text(["source", "k", "measured_var", "predicted_var"], var),
    }


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise UsageError(f"--runs {runs} is not a directory")
    for fname, text in build_report(runs).items():
        _emit(text, args.out, fname)
    return 0


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--seed", type=int, default=None if out_required else 0, help="RNG seed")
    p.add_argument("--out", required=out_required, default=None, help="output directory")


def _hparams(p: argparse.ArgumentParser) -> None:
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--precision", choices=["fp64", "bf16", "fp8"])
    p.add_argument("--lr", type=float)
    p.add_argument("--wd", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--d-base", dest="d_base", type=int)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="muslab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    verbs = top.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    f = verbs.add_parser("fp8", help="FP8 codec tables and underflow")
    fsub = f.add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = fsub.add_parser("audit", help="all 256 codes and decoded values")
    a.add_argument("--format", required=True, choices=["e4m3", "e5m2"])
    _common(a)
    a.set_defaults(fn=cmd_fp8_audit)
    u = fsub.add_parser("underflow", help="underflow fraction of act(N(0,1)) samples")
    u.add_argument("--act", required=True, choices=sorted(ACTIVATIONS))
    u.add_argument("--n", type=int, default=1_000_000)
    _common(u)
    u.set_defaults(fn=cmd_fp8_underflow)

    s = verbs.add_parser("sim", help="Monte-Carlo variance experiments")
    ssub = s.add_subparsers(dest="action", required=True, parser_class=_Parser)
    av = ssub.add_parser("attn-variance", help="attention output variance vs row length")
    av.add_argument("--k", type=_int_list, default=[16, 64, 256, 1024, 4096])
    av.add_argument("--trials", type=int, default=10_000)
    av.add_argument("--mode", choices=["iid", "zipf"], default="iid")
    av.add_argument("--variant", choices=["std", "sqrt"], default="std")
    av.add_argument("--dim", type=int, default=16)
    av.add_argument("--vocab", type=int, default=512)
    av.add_argument("--exponent", type=float, default=1.0)
    av.add_argument("--workers", type=int)
    _common(av)
    av.set_defaults(fn=cmd_sim_attn)
    sm = ssub.add_parser("softmax-moments", help="softmax mean, variance and Cov(n, d)")
    sm.add_argument("--k", type=int, default=64)
    sm.add_argument("--trials", type=int, default=1_000_000)
    sm.add_argument("--workers", type=int)
    _common(sm)
    sm.set_defaults(fn=cmd_sim_softmax)
    rp = ssub.add_parser("residual-profile", help="per-layer residual std at init")
    rp.add_argument("--config")
    rp.add_argument("--arm", choices=["mus", "sp"])
    rp.add_argument("--width", type=int)
    rp.add_argument("--depth", type=int)
    _hparams(rp)
    rp.add_argument("--seed", type=int)
    rp.add_argument("--out")
    rp.set_defaults(fn=cmd_sim_residual)

    t = verbs.add_parser("train", help="train one model")
    t.add_argument("--config")
    t.add_argument("--checkpoint", action="store_true", help="save final weights")
    _hparams(t)
    _common(t, out_required=True)
    t.set_defaults(fn=cmd_train)

    sw = verbs.add_parser("sweep", help="lr/wd grid over widths")
    sw.add_argument("--spec", required=True)
    sw.add_argument("--workers", type=int)
    _hparams(sw)
    _common(sw, out_required=True)
    sw.set_defaults(fn=cmd_sweep)

    tc = verbs.add_parser("transfer-check", help="tune narrow, transfer wide, compare")
    tc.add_argument("--base", type=int, required=True)
    tc.add_argument("--new", type=int, required=True)
    tc.add_argument("--scheme", choices=["mus", "sp"], required=True)
    tc.add_argument("--rule", choices=["mus", "sp"], help="width rule for the transfer (default: --scheme)")
    tc.add_argument("--spec", help="config with [model] [train] [data] [sweep]")
    tc.add_argument("--workers", type=int)
    _hparams(tc)
    _common(tc, out_required=True)
    tc.set_defaults(fn=cmd_transfer)

    r = verbs.add_parser("report", help="aggregate run CSVs into figure tables")
    r.add_argument("--runs", required=True)
    _common(r, out_required=True)
    r.set_defaults(fn=cmd_report)
    return top


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else 2
    except OSError as exc:
        print(f"muslab: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("muslab: interrupted; partial results were flushed", file=sys.stderr)
        return 130


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
