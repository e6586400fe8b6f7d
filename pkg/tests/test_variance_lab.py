import math

import numpy as np
import pytest

from muslab.model import ModelConfig
from muslab.variance_lab import (
    SimSpec,
    Variant,
    ZipfEmbedding,
    attention_variance_curve,
    predicted_attention_var,
    predicted_softmax_var,
    residual_stream_profile,
    softmax_moments,
    value_cosine_similarity,
)
from oracles import attention_var_first_order, softmax_var_first_order


def test_closed_forms_match_oracle():
    for k in (2, 16, 64, 1024, 4096):
        assert predicted_attention_var(k) == pytest.approx(attention_var_first_order(k), rel=1e-15)
        assert predicted_softmax_var(k) == pytest.approx(softmax_var_first_order(k), rel=1e-15)
        assert predicted_attention_var(k, "sqrt") == 1.0
    assert predicted_attention_var(1024) == pytest.approx(0.002653, abs=5e-7)
    ks = np.array([16, 64, 256])
    assert np.all(np.diff(predicted_attention_var(ks)) < 0)


def test_softmax_mean_is_exactly_one_over_k():
    mean, var, cov = softmax_moments(64, trials=20_000, seed=1)
    assert mean == pytest.approx(1 / 64, rel=1e-12)
    assert var > 0


def test_softmax_covariance_matches_numerator_variance():
    # Cov[n_0, d] = Var[n_0] = e(e - 1) for lognormal n_0
    _, _, cov = softmax_moments(64, trials=1_000_000, seed=0)
    assert abs(cov / (math.e * (math.e - 1)) - 1) < 0.05


def test_softmax_moments_rejects_small_k():
    with pytest.raises(ValueError):
        softmax_moments(1, 10)


def test_standard_attention_variance_at_1024():
    res = attention_variance_curve(SimSpec([1024], trials=10_000, seed=0), "std")
    assert abs(res.measured_var[0] / 0.002653 - 1) < 0.15


def test_sqrt_softmax_is_unit_variance():
    res = attention_variance_curve(SimSpec([1, 16, 256], trials=5_000, seed=2), Variant.SQRT)
    assert all(0.9 <= v <= 1.1 for v in res.measured_var)
    assert res.predicted_var == [1.0, 1.0, 1.0]


def test_single_key_attention_returns_value():
    res = attention_variance_curve(SimSpec([1], trials=20_000, seed=3), "std")
    assert res.measured_var[0] == pytest.approx(1.0, rel=0.02)


def test_zipf_values_raise_attention_variance():
    spec = SimSpec([64, 256, 1024], trials=2_000, value_source=ZipfEmbedding(512, 1.0), seed=0)
    std = attention_variance_curve(spec, "std")
    assert std.measured_var[-1] > predicted_attention_var(1024)
    sq = attention_variance_curve(spec, "sqrt")
    assert min(sq.measured_var) > 1.05
    assert all(a <= b for a, b in zip(sq.measured_var, sq.measured_var[1:]))


def test_curve_is_seed_reproducible_and_worker_independent():
    spec = SimSpec([8, 32], trials=3_000, seed=7)
    a = attention_variance_curve(spec, "std")
    b = attention_variance_curve(spec, "std")
    assert a.rows() == b.rows()
    c = attention_variance_curve(SimSpec([8, 32], trials=3_000, seed=8), "std")
    assert c.measured_var != a.measured_var


def test_parallel_equals_serial(monkeypatch):
    import muslab.variance_lab as vl

    monkeypatch.setattr(vl, "_CHUNK_ELEMS", 4096)  # force several chunks
    spec = SimSpec([64], trials=500, seed=4)
    serial = vl.attention_variance_curve(spec, "std")
    parallel = vl.attention_variance_curve(spec, "std", workers=2)
    assert serial.rows() == parallel.rows()
    assert vl.softmax_moments(16, 2000, 1) == vl.softmax_moments(16, 2000, 1, workers=2)


def test_cosine_similarity():
    iid = value_cosine_similarity(SimSpec([256], trials=10, dim=256), absolute=True)
    assert iid < 0.1
    zipf = value_cosine_similarity(SimSpec([256], trials=10, value_source=ZipfEmbedding(512, 1.0), dim=256))
    control = value_cosine_similarity(SimSpec([256], trials=10, dim=256))
    assert zipf > control
    assert value_cosine_similarity(SimSpec([1], trials=3)) == 0.0


def test_simspec_validation():
    with pytest.raises(ValueError):
        SimSpec([], trials=10)
    with pytest.raises(ValueError):
        SimSpec([4], trials=0)
    with pytest.raises(ValueError):
        ZipfEmbedding(1, 1.0)


def test_csv_layout():
    text = attention_variance_curve(SimSpec([4, 8], trials=50), "std").to_csv()
    lines = text.strip().splitlines()
    assert lines[0].startswith("k,measured_var,predicted_var")
    assert [l.split(",")[0] for l in lines[1:]] == ["4", "8"]


def test_residual_profile_mus_vs_sp():
    mus = residual_stream_profile(ModelConfig.mus(d_model=128, depth=20, vocab_size=256), seed=0)
    assert len(mus.stds) == 21
    assert all(0.8 <= s <= 1.25 for s in mus.stds[1:])
    sp = residual_stream_profile(ModelConfig.sp(d_model=128, depth=20, vocab_size=256), seed=0)
    assert sp.stds[20] > sp.stds[1]
    assert "layer3.ffn.output" in mus.histograms
    counts, edges = mus.histograms["layer3.ffn.output"]
    assert counts.sum() == 4 * 64 * 128 and len(edges) == 65


def test_residual_profile_depth_zero():
    cfg = ModelConfig.mus(d_model=32, depth=0, vocab_size=64)
    prof = residual_stream_profile(cfg, seed=0)
    assert len(prof.stds) == 1 and prof.histograms == {}
