"""Single hidden layer trained with Lion under an explicit (a, b, c) parametrization.

``a`` multiplies the layer output, ``b`` is the init std and ``c`` the
learning rate. Used to check that (a*theta, b/theta, c/theta) traces the
same function as (a, b, c).
"""

from __future__ import annotations

import numpy as np

from muslab.autograd import Tape, Tensor, backward, ops
from muslab.model.config import Role
from muslab.model.params import ParamGroup
from muslab.optim.lion import LionState, lion_step


def hidden_layer_trajectory(
    a: float,
    b: float,
    c: float,
    steps: int = 100,
    seed: int = 0,
    wd: float = 0.0,
    fan_in: int = 32,
    fan_out: int = 16,
    batch: int = 8,
) -> np.ndarray:
    """Outputs ``a * X @ W_t`` on a fixed probe batch for t = 0..steps.

    The regression target and inputs depend only on ``seed``; the initial
    weights are ``b`` times a seed-determined standard normal draw.
    """
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal((fan_in, fan_out))
    x = rng.standard_normal((batch, fan_in))
    target = rng.standard_normal((batch, fan_out))
    p = ParamGroup("w", Tensor(b * w0, requires_grad=True), Role.HIDDEN, fan_in)
    state = LionState.zeros_like(p)
    xt = Tensor(x)
    outs = [a * (x @ p.data)]
    for _ in range(steps):
        with Tape():
            y = ops.matmul(xt, p.tensor, a)
            loss = ops.mean(ops.square(ops.sub(y, target)))
        backward(loss)
        lion_step(p, p.tensor.grad, state, c, wd)
        p.tensor.grad = None
        outs.append(a * (x @ p.data))
    return np.stack(outs)
