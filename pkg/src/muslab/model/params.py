"""Parameter groups, initialization and checkpoint serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from muslab.autograd import Tensor
from muslab.model.config import ModelConfig, Parametrization, Role


@dataclass
class ParamGroup:
    name: str
    tensor: Tensor
    role: Role
    fan_in: int

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


def _layer_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], Role, int]]:
    d, f = cfg.d_model, cfg.d_ffn
    shapes: list[tuple[str, tuple[int, ...], Role, int]] = [
        ("embed", (cfg.vocab_size, d), Role.INPUT, cfg.vocab_size),
    ]
    if cfg.pos_encoding == "learned":
        shapes.append(("pos", (cfg.max_seq_len, d), Role.INPUT, cfg.max_seq_len))
    for l in range(cfg.depth):
        p = f"h{l}"
        shapes += [
            (f"{p}.attn.qkv", (d, 3 * d), Role.HIDDEN, d),
            (f"{p}.attn.out", (d, d), Role.HIDDEN, d),
            (f"{p}.ffn.up", (d, f), Role.HIDDEN, d),
            (f"{p}.ffn.down", (f, d), Role.HIDDEN, f),
            (f"{p}.ln1.gain", (d,), Role.NORM, d),
            (f"{p}.ln1.bias", (d,), Role.NORM, d),
            (f"{p}.ln2.gain", (d,), Role.NORM, d),
            (f"{p}.ln2.bias", (d,), Role.NORM, d),
        ]
    if cfg.final_ln:
        shapes += [("ln_f.gain", (d,), Role.NORM, d), ("ln_f.bias", (d,), Role.NORM, d)]
    shapes.append(("head", (d, cfg.vocab_size), Role.OUTPUT, d))
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> list[ParamGroup]:
    """Draw all parameters deterministically from ``seed``.

    Under MuS every weight matrix (embedding included) is N(0, 1). Under SP
    linear weights are N(0, sigma_init^2), with sigma_init defaulting to
    1/sqrt(fan_in); embeddings stay N(0, 1). Norm gains start at 1, biases 0.
    """
    rng = np.random.default_rng(seed)
    groups = []
    for name, shape, role, fan_in in _layer_shapes(cfg):
        if role is Role.NORM:
            data = np.ones(shape) if name.endswith("gain") else np.zeros(shape)
        else:
            std = 1.0
            if cfg.parametrization is Parametrization.SP and role is not Role.INPUT:
                std = cfg.sigma_init if cfg.sigma_init is not None else 1.0 / math.sqrt(fan_in)
            data = rng.standard_normal(shape) * std
        groups.append(ParamGroup(name, Tensor(data, requires_grad=True, name=name), role, fan_in))
    return groups


def by_name(params: Iterable[ParamGroup] | Mapping[str, ParamGroup]) -> dict[str, ParamGroup]:
    if isinstance(params, Mapping):
        return dict(params)
    return {p.name: p for p in params}


def save_checkpoint(directory: str | Path, params: Iterable[ParamGroup], cfg: ModelConfig) -> Path:
    """Write ``weights.bin`` (little-endian float64, concatenated) and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / "weights.bin", "wb") as fh:
        for p in params:
            raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
            fh.write(raw)
            entries.append(
                dict(
                    name=p.name,
                    shape=list(p.data.shape),
                    role=p.role.value,
                    fan_in=p.fan_in,
                    offset=offset,
                    nbytes=len(raw),
                )
            )
            offset += len(raw)
    manifest = dict(format="muslab-checkpoint-v1", dtype="float64-le", model=cfg.to_dict(), tensors=entries)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_checkpoint(directory: str | Path) -> tuple[list[ParamGroup], ModelConfig]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != "muslab-checkpoint-v1":
        raise ValueError(f"{directory}: not a muslab checkpoint")
    cfg = ModelConfig.from_dict(manifest["model"])
    blob = (directory / "weights.bin").read_bytes()
    groups = []
    for e in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f8", count=e["nbytes"] // 8, offset=e["offset"])
        data = arr.reshape(e["shape"]).astype(np.float64)
        groups.append(
            ParamGroup(e["name"], Tensor(data, requires_grad=True, name=e["name"]), Role(e["role"]), e["fan_in"])
        )
    return groups, cfg
