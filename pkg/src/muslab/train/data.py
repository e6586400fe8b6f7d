"""Token sources: synthetic Zipf and Markov streams, and byte-level text files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np


def zipf_probs(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** -exponent
    return w / w.sum()


@dataclass(frozen=True)
class SyntheticZipf:
    vocab: int = 512
    exponent: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class SyntheticMarkov:
    """Sparse order-``order`` chain: every context has ``branching`` Zipf-weighted successors."""

    vocab: int = 512
    order: int = 1
    seed: int = 0
    branching: int = 8
    exponent: float = 1.0


@dataclass(frozen=True)
class TextFile:
    path: str


Source = Union[SyntheticZipf, SyntheticMarkov, TextFile]


class Dataset:
    """Fixed-length token sequences served in a seed-determined shuffled order.

    ``sequence(i)`` is a pure function of ``i``; ``batch(step, size, seed)``
    picks sequences through a permutation drawn from ``seed`` and wraps
    around when the pool is exhausted.
    """

    def __init__(self, vocab_size: int, seq_len: int, num_sequences: int):
        if seq_len < 2:
            raise ValueError("seq_len must be >= 2 to form next-token targets")
        if num_sequences < 1:
            raise ValueError("dataset has no sequences")
        self.vocab_size = vocab_size
        self.seq_len = seq_len
        self.num_sequences = num_sequences
        self._perm: dict[int, np.ndarray] = {}

    def sequence(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def order(self, seed: int) -> np.ndarray:
        if seed not in self._perm:
            self._perm[seed] = np.random.default_rng(np.random.SeedSequence([int(seed), 11])).permutation(
                self.num_sequences
            )
        return self._perm[seed]

    def batch(self, step: int, batch_size: int, seed: int = 0) -> np.ndarray:
        perm = self.order(seed)
        idx = (step * batch_size + np.arange(batch_size)) % self.num_sequences
        return np.stack([self.sequence(int(perm[j])) for j in idx])


class _ZipfData(Dataset):
    def __init__(self, src: SyntheticZipf, seq_len: int, num_sequences: int):
        super().__init__(src.vocab, seq_len, num_sequences)
        self.src = src
        self._cdf = np.cumsum(zipf_probs(src.vocab, src.exponent))

    def sequence(self, i: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.src.seed, 12, i]))
        u = rng.random(self.seq_len)
        return np.minimum(np.searchsorted(self._cdf, u, side="right"), self.vocab_size - 1)


class _MarkovData(Dataset):
    def __init__(self, src: SyntheticMarkov, seq_len: int, num_sequences: int):
        if src.order < 1 or src.branching < 1:
            raise ValueError("Markov order and branching must be >= 1")
        super().__init__(src.vocab, seq_len, num_sequences)
        self.src = src
        rng = np.random.default_rng(np.random.SeedSequence([src.seed, 13]))
        self.n_states = min(src.vocab**src.order, 1 << 16)
        self.successors = np.stack(
            [rng.choice(src.vocab, src.branching, replace=False) for _ in range(self.n_states)]
        )
        self._cdf = np.cumsum(zipf_probs(src.branching, src.exponent))

    def _state(self, ctx: np.ndarray) -> int:
        s = 0
        for t in ctx:
            s = (s * self.src.vocab + int(t)) % self.n_states
        return s

    def sequence(self, i: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.src.seed, 14, i]))
        out = np.empty(self.seq_len, dtype=np.int64)
        k = self.src.order
        out[:k] = rng.integers(0, self.vocab_size, min(k, self.seq_len))
        picks = np.minimum(np.searchsorted(self._cdf, rng.random(self.seq_len), side="right"), self.src.branching - 1)
        for t in range(k, self.seq_len):
            out[t] = self.successors[self._state(out[t - k : t]), picks[t]]
        return out

    def entropy_rate(self) -> float:
        """Per-token entropy in nats once the context is known."""
        p = zipf_probs(self.src.branching, self.src.exponent)
        return float(-(p * np.log(p)).sum())


class _BytesData(Dataset):
    def __init__(self, data: bytes, seq_len: int):
        self.tokens = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
        n = len(self.tokens) // seq_len
        if n < 1:
            raise ValueError(f"text has {len(self.tokens)} bytes, fewer than seq_len={seq_len}")
        super().__init__(256, seq_len, n)

    def sequence(self, i: int) -> np.ndarray:
        return self.tokens[i * self.seq_len : (i + 1) * self.seq_len]


def ingest(source: Source, seq_len: int = 128, num_sequences: int = 1 << 20) -> Dataset:
    """Build a :class:`Dataset`; text files are tokenized as raw bytes (vocab 256)."""
    if isinstance(source, SyntheticZipf):
        return _ZipfData(source, seq_len, num_sequences)
    if isinstance(source, SyntheticMarkov):
        return _MarkovData(source, seq_len, num_sequences)
    if isinstance(source, TextFile):
        path = Path(source.path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read text file {path}: {exc.strerror or exc}") from exc
        return _BytesData(raw, seq_len)
    raise TypeError(f"unknown data source {source!r}")


def source_from_dict(d: dict) -> Source:
    """``{"kind": "markov", "vocab": 512, ...}`` to a source descriptor."""
    d = dict(d)
    kind = d.pop("kind", "markov")
    cls = {"zipf": SyntheticZipf, "markov": SyntheticMarkov, "text": TextFile}.get(kind)
    if cls is None:
        raise ValueError(f"unknown data kind {kind!r}; expected zipf, markov or text")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ValueError(f"bad {kind} data options {d}: {exc}") from None


def source_to_dict(src: Source) -> dict:
    from dataclasses import asdict

    kind = {SyntheticZipf: "zipf", SyntheticMarkov: "markov", TextFile: "text"}[type(src)]
    return {"kind": kind, **asdict(src)}
