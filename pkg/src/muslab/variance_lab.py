"""Monte-Carlo checks of softmax and attention output statistics.

Every simulation splits its trials into fixed-size chunks, each with its own
pre-assigned child seed, and reduces chunk moments in chunk order. The chunk
layout depends only on the trial count and ``k``, so a run with worker
processes is bit-identical to a serial run.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from muslab.model import ModelConfig, Probe, forward_lm, init_params

E = math.e

# elements per chunk; keeps the largest temporary near 32 MB
_CHUNK_ELEMS = 1 << 22


class Variant(str, Enum):
    STANDARD = "std"
    SQRT = "sqrt"


@dataclass(frozen=True)
class IID:
    """Logits and value rows drawn i.i.d. N(0, 1) for every trial."""


@dataclass(frozen=True)
class ZipfEmbedding:
    """Tokens drawn from a Zipf law over ``vocab`` ids; values are their embedding rows.

    Query/key projections are fixed random maps, so logits between distinct
    tokens have roughly unit variance while repeated tokens share a value row.
    """

    vocab: int = 512
    exponent: float = 1.0

    def __post_init__(self) -> None:
        if self.vocab < 2 or self.exponent <= 0:
            raise ValueError("ZipfEmbedding needs vocab >= 2 and exponent > 0")


@dataclass(frozen=True)
class SimSpec:
    k_values: Sequence[int]
    trials: int = 10_000
    value_source: IID | ZipfEmbedding = IID()
    seed: int = 0
    dim: int = 16

    def __post_init__(self) -> None:
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if not self.k_values:
            raise ValueError("k_values must be nonempty")
        if min(self.k_values) < 1:
            raise ValueError("every k must be >= 1")
        if self.trials < 1 or self.dim < 1:
            raise ValueError("trials and dim must be >= 1")


@dataclass
class SimResult:
    variant: Variant
    k: list[int] = field(default_factory=list)
    measured_mean: list[float] = field(default_factory=list)
    measured_var: list[float] = field(default_factory=list)
    predicted_var: list[float] = field(default_factory=list)
    cosine_similarity_mean: list[float] = field(default_factory=list)

    def rows(self) -> list[dict[str, float]]:
        return [
            dict(k=k, measured_mean=m, measured_var=v, predicted_var=p, cosine_similarity_mean=c)
            for k, m, v, p, c in zip(
                self.k, self.measured_mean, self.measured_var, self.predicted_var, self.cosine_similarity_mean
            )
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "measured_var", "predicted_var", "measured_mean", "cosine_similarity_mean"])
        for r in self.rows():
            w.writerow([r["k"], repr(r["measured_var"]), repr(r["predicted_var"]), repr(r["measured_mean"]),
                        repr(r["cosine_similarity_mean"])])
        return buf.getvalue()


def predicted_attention_var(k: int | np.ndarray, variant: Variant | str = Variant.STANDARD):
    """First-order attention output variance at row length ``k``."""
    if Variant(variant) is Variant.SQRT:
        return np.ones_like(np.asarray(k, dtype=float)) if np.ndim(k) else 1.0
    k = np.asarray(k, dtype=float) if np.ndim(k) else float(k)
    return E / k - (E - 1) / k**2


def predicted_softmax_var(k: int) -> float:
    return (E - 1) / k**2 - (E - 1) / k**3


# ---------------------------------------------------------------- moment plumbing


@dataclass
class _Moments:
    """Running count, mean and squared deviation (combined pairwise, in order)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, x: np.ndarray) -> "_Moments":
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return cls()
        mu = float(x.mean())
        return cls(x.size, mu, float(np.sum((x - mu) ** 2)))

    def merge(self, o: "_Moments") -> "_Moments":
        if o.n == 0:
            return self
        if self.n == 0:
            return o
        n = self.n + o.n
        delta = o.mean - self.mean
        return _Moments(n, self.mean + delta * o.n / n, self.m2 + o.m2 + delta * delta * self.n * o.n / n)

    @property
    def var(self) -> float:
        return self.m2 / self.n if self.n else 0.0


def _chunks(trials: int, per_trial_elems: int) -> list[int]:
    size = max(1, min(trials, _CHUNK_ELEMS // max(per_trial_elems, 1)))
    full, rest = divmod(trials, size)
    return [size] * full + ([rest] if rest else [])


def _child_seeds(seed: int, tag: Sequence[int], n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence([int(seed), *map(int, tag)]).spawn(n)


def _map(fn: Callable, jobs: list, workers: int | None) -> list:
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# ---------------------------------------------------------------- softmax moments


def _softmax_chunk(job):
    k, n, ss = job
    rng = np.random.default_rng(ss)
    x = rng.standard_normal((n, k))
    num = np.exp(x)
    den = num.sum(axis=1)
    s = num / den[:, None]
    return _Moments.of(s), _Moments.of(num[:, 0]), _Moments.of(den), float(np.sum(num[:, 0] * den))


def softmax_moments(k: int, trials: int = 1_000_000, seed: int = 0, workers: int | None = None):
    """Sample ``(mean_s, var_s, cov_nd)`` of the softmax of ``k`` i.i.d. N(0, 1) logits.

    ``mean_s`` and ``var_s`` pool all coordinates of all trials; ``cov_nd`` is
    the covariance between the first numerator ``exp(x_0)`` and the
    denominator ``sum_i exp(x_i)``.
    """
    if k < 2:
        raise ValueError(f"softmax_moments needs k >= 2, got {k}")
    if trials < 2:
        raise ValueError("need at least 2 trials")
    sizes = _chunks(trials, k)
    jobs = [(k, n, ss) for n, ss in zip(sizes, _child_seeds(seed, (1, k), len(sizes)))]
    s_m, n_m, d_m, cross = _Moments(), _Moments(), _Moments(), 0.0
    for s, nm, dm, c in _map(_softmax_chunk, jobs, workers):
        s_m, n_m, d_m = s_m.merge(s), n_m.merge(nm), d_m.merge(dm)
        cross += c
    cov = cross / trials - n_m.mean * d_m.mean
    return s_m.mean, s_m.var, cov


# ---------------------------------------------------------------- attention rows


def _zipf_probs(src: ZipfEmbedding) -> np.ndarray:
    w = 1.0 / np.arange(1, src.vocab + 1) ** src.exponent
    return w / w.sum()


def _zipf_tables(spec: SimSpec):
    src = spec.value_source
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 2]))
    table = rng.standard_normal((src.vocab, spec.dim))
    wq = rng.standard_normal((spec.dim, spec.dim)) / math.sqrt(spec.dim)
    wk = rng.standard_normal((spec.dim, spec.dim)) / math.sqrt(spec.dim)
    keys = table @ wk
    queries = table @ wq
    return table, queries, keys, np.cumsum(_zipf_probs(src))


def _draw_row(rng, k: int, n: int, spec: SimSpec, tables):
    """Logits ``[n, k]`` and values ``[n, k, dim]`` for ``n`` trials."""
    if isinstance(spec.value_source, IID):
        return rng.standard_normal((n, k)), rng.standard_normal((n, k, spec.dim))
    table, queries, keys, cdf = tables
    tok = np.minimum(np.searchsorted(cdf, rng.random((n, k)), side="right"), len(cdf) - 1)
    q = queries[tok[:, -1]]  # the row belongs to the last position
    logits = np.einsum("nd,nkd->nk", q, keys[tok]) / math.sqrt(spec.dim)
    return logits, table[tok]


def _attention_chunk(job):
    k, n, ss, spec, variant, tables = job
    rng = np.random.default_rng(ss)
    logits, values = _draw_row(rng, k, n, spec, tables)
    z = logits - logits.max(axis=1, keepdims=True)
    s = np.exp(z)
    s /= s.sum(axis=1, keepdims=True)
    w = np.sqrt(s) if variant is Variant.SQRT else s
    out = np.einsum("nk,nkd->nd", w, values)
    return _Moments.of(out)


def attention_variance_curve(
    spec: SimSpec, variant: Variant | str = Variant.STANDARD, workers: int | None = None
) -> SimResult:
    """Output variance of one causal attention row at each length ``k``.

    The variance pools all output coordinates over all trials, which for
    i.i.d. values equals the per-coordinate variance at position ``k``.
    """
    variant = Variant(variant)
    tables = _zipf_tables(spec) if isinstance(spec.value_source, ZipfEmbedding) else None
    res = SimResult(variant)
    for k in spec.k_values:
        sizes = _chunks(spec.trials, k * spec.dim)
        seeds = _child_seeds(spec.seed, (3, k), len(sizes))
        jobs = [(k, n, ss, spec, variant, tables) for n, ss in zip(sizes, seeds)]
        m = _Moments()
        for part in _map(_attention_chunk, jobs, workers):
            m = m.merge(part)
        res.k.append(k)
        res.measured_mean.append(m.mean)
        res.measured_var.append(m.var)
        res.predicted_var.append(float(predicted_attention_var(k, variant)))
        res.cosine_similarity_mean.append(value_cosine_similarity(SimSpec([k], 16, spec.value_source, spec.seed, spec.dim)))
    return res


def value_cosine_similarity(spec: SimSpec, absolute: bool = False) -> float:
    """Mean pairwise cosine similarity among the ``k`` value rows of a trial.

    Uses the first ``k`` of ``spec.k_values`` and averages over
    ``spec.trials`` trials; ``k == 1`` has no pairs and returns 0.
    """
    k = spec.k_values[0]
    if k < 2:
        return 0.0
    tables = _zipf_tables(spec) if isinstance(spec.value_source, ZipfEmbedding) else None
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 4, k]))
    total = 0.0
    for _ in range(spec.trials):
        _, v = _draw_row(rng, k, 1, spec, tables)
        u = v[0] / np.linalg.norm(v[0], axis=1, keepdims=True)
        if absolute:
            g = np.abs(u @ u.T)
            total += (g.sum() - np.trace(g)) / (k * (k - 1))
        else:
            s = u.sum(axis=0)
            total += (s @ s - k) / (k * (k - 1))
    return float(total / spec.trials)


# ---------------------------------------------------------------- residual stream


@dataclass
class ResidualProfile:
    """Residual-stream std per layer (entry 0 is the embedding output) and block histograms."""

    stds: list[float]
    histograms: dict[str, tuple[np.ndarray, np.ndarray]]
    kurtosis: dict[str, float]


def _excess_kurtosis(x: np.ndarray) -> float:
    x = x - x.mean()
    v = np.mean(x * x)
    return float(np.mean(x**4) / (v * v) - 3.0) if v > 0 else 0.0


def residual_stream_profile(
    cfg: ModelConfig, seed: int = 0, batch: int = 4, seq_len: int = 64, bins: int = 64
) -> ResidualProfile:
    """Forward random tokens through a freshly initialized model and record statistics."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
    tokens = rng.integers(0, cfg.vocab_size, (batch, seq_len))
    probe = Probe(activations=True)
    forward_lm(tokens, init_params(cfg, seed), cfg, probe)
    hists, kurt = {}, {}
    for name, vals in probe.block_values.items():
        hists[name] = np.histogram(vals, bins=bins)
        kurt[name] = _excess_kurtosis(vals)
    return ResidualProfile(list(probe.residual_std), hists, kurt)
