import math

import numpy as np
import pytest

from muslab.autograd import Tape, Tensor, backward, ops
from muslab.autograd import _fallback
from muslab.autograd import backend as ag_backend
from oracles import central_diff

SEEDS = range(100)


def gradcheck(build, shapes, seed, positive=False, tol=1e-4):
    """Compare tape gradients of ``sum(R * build(*xs))`` against central differences."""
    rng = np.random.default_rng(seed)
    xs = [rng.standard_normal(s) for s in shapes]
    if positive:
        xs = [np.abs(x) + 0.5 for x in xs]
    out_shape = build(*[Tensor(x) for x in xs]).shape
    r = rng.standard_normal(out_shape)

    def scalar(*arrs):
        return float(np.sum(build(*[Tensor(a) for a in arrs]).data * r))

    ts = [Tensor(x.copy(), requires_grad=True) for x in xs]
    with Tape():
        loss = ops.sum(ops.mul(build(*ts), r))
    backward(loss)
    for i, (x, t) in enumerate(zip(xs, ts)):

        def f(xi, i=i):
            arrs = list(xs)
            arrs[i] = xi
            return scalar(*arrs)

        num = central_diff(f, x.copy())
        err = np.max(np.abs(t.grad - num)) / max(np.max(np.abs(num)), 1e-8)
        assert err < tol, (i, err)


OPS = {
    "add": (lambda a, b: ops.add(a, b), [(3, 4), (4,)], False),
    "sub": (lambda a, b: ops.sub(a, b), [(3, 4), (3, 1)], False),
    "mul": (lambda a, b: ops.mul(a, b), [(3, 4), (3, 4)], False),
    "axpby": (lambda a, b: ops.axpby(a, b, 0.8, -0.6), [(2, 5), (2, 5)], False),
    "square": (ops.square, [(3, 3)], False),
    "exp": (ops.exp, [(3, 3)], False),
    "log": (ops.log, [(3, 3)], True),
    "tanh": (ops.tanh, [(3, 3)], False),
    "gelu": (ops.gelu, [(4, 3)], False),
    "silu": (ops.silu, [(4, 3)], False),
    "relu": (ops.relu, [(4, 3)], False),
    "reshape": (lambda a: ops.reshape(a, (6, 2)), [(3, 4)], False),
    "transpose": (lambda a: ops.transpose(a, (2, 0, 1)), [(2, 3, 2)], False),
    "index": (lambda a: a[:, 1], [(3, 4)], False),
    "sum_axis": (lambda a: ops.sum(a, axis=1), [(3, 4)], False),
    "mean": (ops.mean, [(3, 4)], False),
    "matmul": (lambda a, b: ops.matmul(a, b, 0.7), [(3, 4), (4, 2)], False),
    "matmul_batched": (lambda a, b: ops.matmul(a, b, 0.5), [(2, 3, 4), (2, 4, 3)], False),
    "matmul_shared": (lambda a, b: ops.matmul(a, b, 1.3), [(2, 3, 4), (4, 2)], False),
    "layernorm": (lambda x, g, b: ops.layernorm(x, g, b), [(3, 5), (5,), (5,)], False),
    "softmax": (lambda x: ops.softmax_rows(x), [(3, 5)], False),
    "softmax_causal": (lambda x: ops.softmax_rows(x, causal=True), [(2, 4, 4)], False),
    "sqrt_softmax": (lambda x: ops.sqrt_softmax_rows(x), [(3, 5)], False),
    "sqrt_softmax_causal": (lambda x: ops.sqrt_softmax_rows(x, causal=True), [(4, 4)], False),
    "cross_entropy": (lambda z: ops.cross_entropy(z, np.array([0, 3, 1])), [(3, 4)], False),
    "cross_entropy_sum": (lambda z: ops.cross_entropy(z, np.array([2, 2]), "sum"), [(2, 4)], False),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    build, shapes, positive = OPS[name]
    for seed in SEEDS:
        gradcheck(build, shapes, seed, positive)


def test_embedding_gradient():
    ids = np.array([[0, 2, 2], [1, 0, 3]])
    for seed in range(20):
        gradcheck(lambda t: ops.embedding(t, ids), [(4, 3)], seed)


def test_matmul_examples():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)
    out = ops.matmul(Tensor([[1.0, 1.0]]), Tensor([[1.0], [1.0]]), 1 / math.sqrt(2))
    assert out.data[0, 0] == pytest.approx(1.41421356, rel=1e-8)


def test_matmul_scale_factors_exactly():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    for alpha in (0.5, 2.0, 0.25):
        np.testing.assert_array_equal(
            ops.matmul(Tensor(a), Tensor(b), alpha).data, alpha * ops.matmul(Tensor(a), Tensor(b)).data
        )


def test_matmul_backward_uses_alpha_on_both_sides():
    rng = np.random.default_rng(1)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    g = rng.standard_normal((3, 2))
    with Tape():
        out = ops.matmul(a, b, 0.3)
    backward(out, g)
    np.testing.assert_allclose(a.grad, 0.3 * g @ b.data.T, rtol=1e-14)
    np.testing.assert_allclose(b.grad, 0.3 * a.data.T @ g, rtol=1e-14)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(3, 4\).*\(5, 2\)"):
        ops.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 2))))


def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax_rows(Tensor(np.zeros(4))).data, [0.25] * 4)
    s = ops.softmax_rows(Tensor([1000.0, 0.0])).data
    assert s[0] == 1.0 and s[1] == 0.0
    c = ops.softmax_rows(Tensor(np.random.default_rng(0).standard_normal((4, 4))), causal=True).data
    assert np.all(c[1, 2:] == 0.0)
    assert c[1, :2].sum() == pytest.approx(1.0, abs=1e-15)


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(2).standard_normal((6, 50, 50)) * 5
    for causal in (False, True):
        s = ops.softmax_rows(Tensor(x), causal=causal).data
        assert np.max(np.abs(s.sum(-1) - 1)) < 1e-12
        if causal:
            assert np.all(s[..., np.triu_indices(50, 1)[0], np.triu_indices(50, 1)[1]] == 0.0)


def test_sqrt_softmax_squares_to_softmax():
    x = Tensor(np.random.default_rng(3).standard_normal((7, 7)))
    c = ops.sqrt_softmax_rows(x, causal=True).data
    np.testing.assert_allclose(c**2, ops.softmax_rows(x, causal=True).data, rtol=1e-14)


def test_layernorm_examples():
    one, zero = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(ops.layernorm(Tensor(np.full(4, 3.0)), one, zero).data, 0.0)
    out = ops.layernorm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0).data
    np.testing.assert_allclose(out, [1.0, -1.0])
    x = np.random.default_rng(4).standard_normal((64, 256)) * 2.0
    std = ops.layernorm(Tensor(x), Tensor(np.ones(256)), Tensor(np.zeros(256))).data.std(axis=-1)
    assert np.all((std >= 0.99) & (std <= 1.01))
    with pytest.raises(ValueError):
        ops.layernorm(Tensor(np.ones((2, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)))


def test_activation_examples():
    relu = ops.activation(Tensor([-3.0, 3.0]), "relu").data
    assert relu.tolist() == [0.0, 3.0]
    assert ops.activation(Tensor([0.0]), "gelu").data[0] == 0.0
    assert ops.activation(Tensor([1.0]), "silu").data[0] == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-12)
    # exact erf form: GELU(1) = Phi(1)
    assert ops.activation(Tensor([1.0]), "GELU").data[0] == pytest.approx(0.8413447460685429, rel=1e-14)
    with pytest.raises(ValueError):
        ops.activation(Tensor([1.0]), "swish2")


def test_gelu_backends_agree():
    x = np.random.default_rng(5).standard_normal(10_000) * 4
    y, dy = ag_backend.gelu_with_grad(x)
    y0, dy0 = _fallback.gelu_with_grad(x)
    np.testing.assert_allclose(y, y0, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(dy, dy0, rtol=1e-13, atol=1e-15)


def test_backward_examples():
    w = Tensor(np.random.default_rng(6).standard_normal((2, 2)), requires_grad=True)
    with Tape():
        loss = ops.sum(w)
    backward(loss)
    np.testing.assert_array_equal(w.grad, np.ones((2, 2)))
    # a second pass without zeroing accumulates
    with Tape():
        loss = ops.sum(w)
    backward(loss)
    np.testing.assert_array_equal(w.grad, 2 * np.ones((2, 2)))


def test_backward_rejects_non_scalar():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape():
        out = ops.mul(w, 2.0)
    with pytest.raises(ValueError, match="scalar"):
        backward(out)


def test_shared_input_accumulates_across_paths():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    with Tape():
        y = ops.add(ops.mul(x, x), ops.mul(x, 3.0))
        loss = ops.sum(y)
    backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)


def test_retain_grad_on_intermediate():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape():
        h = ops.mul(x, 2.0).retain_grad()
        loss = ops.sum(ops.square(h))
    backward(loss)
    np.testing.assert_allclose(h.grad, 2 * h.data)
    np.testing.assert_allclose(x.grad, 8 * x.data)


def test_no_tape_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.mul(x, 2.0)
    assert y.is_leaf and not y.requires_grad


def test_tape_replay_is_deterministic():
    def run():
        rng = np.random.default_rng(11)
        w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        x = Tensor(rng.standard_normal((3, 4)))
        losses = []
        for _ in range(5):
            with Tape():
                loss = ops.mean(ops.gelu(ops.matmul(x, w, 0.5)))
            backward(loss)
            w.data -= 0.1 * w.grad
            w.grad = None
            losses.append(loss.item())
        return losses

    assert run() == run()
