import csv
import json

import pytest

from muslab.cli import build_parser, load_config, run

TINY = """\
seed = 0

[model]
arm = "mus"
d_model = 16
depth = 1
n_heads = 2

[train]
steps = 8
batch_size = 2
seq_len = 16
lr = 0.03125

[data]
kind = "markov"
vocab = 64
num_sequences = 256
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fp8_audit_lists_all_codes(capsys):
    assert run(["fp8", "audit", "--format", "e4m3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 257
    assert lines[0] == "code,bits,value,category"
    assert lines[0x7E + 1] == "126,01111110,448.0,normal"


def test_fp8_underflow_orders_activations(tmp_path):
    fracs = {}
    for act in ("gelu", "silu", "relu"):
        assert run(["fp8", "underflow", "--act", act, "--n", "200000", "--seed", "1", "--out", str(tmp_path)]) == 0
        row = _rows(tmp_path / f"fp8_underflow_{act}.csv")[0]
        fracs[act] = float(row["underflow_fraction"])
    assert fracs["gelu"] > fracs["silu"] > fracs["relu"] > 0.0


def test_unknown_verb_is_usage_error(capsys):
    assert run(["bogus"]) == 2
    assert run([]) == 2
    assert run(["fp8", "audit", "--format", "e3m4"]) == 2
    capsys.readouterr()


def test_sim_attn_variance_defaults(capsys):
    args = build_parser().parse_args(["sim", "attn-variance", "--k", "16"])
    assert args.trials == 10_000 and args.k == [16]
    assert run(["sim", "attn-variance", "--k", "16"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("k,measured_var,predicted_var") and lines[1].startswith("16,")


def test_sim_outputs_are_idempotent(tmp_path):
    for d in ("a", "b"):
        argv = ["sim", "attn-variance", "--k", "4,8", "--trials", "300", "--mode", "zipf", "--variant", "sqrt"]
        assert run(argv + ["--out", str(tmp_path / d)]) == 0
    name = "attn_variance_zipf_sqrt.csv"
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_softmax_moments_and_residual_profile(tmp_path, capsys):
    assert run(["sim", "softmax-moments", "--k", "8", "--trials", "5000", "--out", str(tmp_path)]) == 0
    row = _rows(tmp_path / "softmax_moments_k8.csv")[0]
    assert float(row["mean"]) == pytest.approx(0.125, rel=1e-12)
    capsys.readouterr()
    assert run(["sim", "residual-profile", "--arm", "mus", "--width", "32", "--depth", "3"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 5


def test_config_precedence(cfg_file):
    cfg = load_config(str(cfg_file), ["train.lr=0.5", "model.depth=3", "seed=4"])
    assert cfg["train"]["lr"] == 0.5 and cfg["model"]["depth"] == 3 and cfg["seed"] == 4
    assert load_config(None, ["data.kind=zipf"])["data"]["kind"] == "zipf"


def test_train_writes_run_directory(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["train", "--config", str(cfg_file), "--out", str(out), "--lr", "0.0625", "--seed", "3"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["lr"] == 0.0625 and man["seed"] == 3
    assert man["config"]["model"]["vocab_size"] == 64
    assert len(_rows(out / "metrics.csv")) == 8
    summary = json.loads(capsys.readouterr().out)
    assert summary["diverged"] is False


def test_train_flags_and_errors(cfg_file, tmp_path, capsys):
    assert run(["train", "--config", str(cfg_file)]) == 2  # --out missing
    assert run(["train", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == 2
    assert run(["train", "--config", str(cfg_file), "--out", str(tmp_path), "--override", "lr=1"]) == 2
    assert run(["train", "--config", str(cfg_file), "--out", str(tmp_path), "--override", "model.width=9"]) == 2
    out = tmp_path / "fp8"
    assert run(["train", "--config", str(cfg_file), "--out", str(out), "--precision", "fp8"]) == 0
    assert any(c.startswith("underflow.layer0") for c in _rows(out / "metrics.csv")[0])
    # an infinite loss scale makes every step non-finite: divergence-only outcome
    div = ["train", "--config", str(cfg_file), "--out", str(tmp_path / "div"), "--override", "train.loss_scale=inf"]
    assert run(div) == 1
    assert (tmp_path / "div" / "metrics.csv").exists()
    capsys.readouterr()


def test_sweep_and_report(cfg_file, tmp_path, capsys):
    spec = tmp_path / "sweep.toml"
    spec.write_text(TINY + "\n[sweep]\nlr_exponents = [-6, -4]\nwd_grid = [0.0]\nwidths = [8, 16]\nd_base = 8\n")
    out = tmp_path / "sw"
    assert run(["sweep", "--spec", str(spec), "--out", str(out)]) == 0
    assert len(_rows(out / "sweep.csv")) == 4
    assert set(json.loads((out / "summary.json").read_text())) == {"8", "16"}
    run(["sim", "attn-variance", "--k", "4", "--trials", "50", "--out", str(tmp_path / "sim")])
    rep = tmp_path / "fig"
    assert run(["report", "--runs", str(tmp_path), "--out", str(rep)]) == 0
    optima = _rows(rep / "optima_vs_width.csv")
    assert [int(r["width"]) for r in optima] == [8, 16]
    assert len(_rows(rep / "loss_curves.csv")) == 4 * 8
    assert _rows(rep / "variance_vs_position.csv")[0]["k"] == "4"
    assert run(["report", "--runs", str(tmp_path / "missing"), "--out", str(rep)]) == 2
    capsys.readouterr()


def test_transfer_check_equal_width(cfg_file, tmp_path, capsys):
    spec = tmp_path / "t.toml"
    spec.write_text(TINY + "\n[sweep]\nlr_exponents = [-6, -4]\n")
    out = tmp_path / "tc"
    argv = ["transfer-check", "--base", "16", "--new", "16", "--scheme", "mus", "--spec", str(spec), "--out", str(out)]
    assert run(argv) == 0
    assert json.loads((out / "transfer_report.json").read_text())["gap"] == 0.0
    assert run(argv[:2] + ["32"] + argv[3:]) == 2  # --base 32 > --new 16
    capsys.readouterr()
