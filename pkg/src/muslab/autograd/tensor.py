"""Dense float64 tensors and the tape that records operations on them."""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "muslab_active_tape", default=None
)


class Tensor:
    """A float64 array with an optional gradient.

    Tensors produced by an operation while a :class:`Tape` is active remember
    the node that created them; :meth:`Tape.backward` walks those nodes in
    reverse. Only leaf tensors (``requires_grad=True`` with no creator) get
    ``.grad`` filled in, unless :meth:`retain_grad` was called.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "_retain", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: Node | None = None
        self._retain = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar; the real work is in muslab.autograd.ops
    def __add__(self, other):
        from muslab.autograd import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from muslab.autograd import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from muslab.autograd import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from muslab.autograd import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from muslab.autograd import ops

        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; multiply by a reciprocal")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from muslab.autograd import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from muslab.autograd import ops

        return ops.matmul(self, other)

    def __getitem__(self, key):
        from muslab.autograd import ops

        return ops.index(self, key)

    def reshape(self, *shape):
        from muslab.autograd import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from muslab.autograd import ops

        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None):
        from muslab.autograd import ops

        return ops.sum(self, axis)

    def mean(self):
        from muslab.autograd import ops

        return ops.mean(self)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(eq=False)
class Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn
    tape: "Tape"


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside it on tensors that
    require gradients are appended in execution order, which is a valid
    topological order. A tape belongs to one thread of execution.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        node = Node(out, inputs, backward, self)
        out._node = node
        out.requires_grad = True
        self.nodes.append(node)

    def backward(self, loss: Tensor, grad: np.ndarray | float | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

        Calling it twice without zeroing accumulates. ``grad`` seeds the
        output gradient (default 1, which requires a scalar loss).
        """
        if grad is None:
            if loss.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        else:
            seed = np.broadcast_to(np.asarray(grad, dtype=np.float64), loss.shape).copy()
        if loss._node is None:
            if loss.requires_grad:
                _accumulate(loss, seed)
            return
        if loss._node.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): seed}
        stop = self.nodes.index(loss._node)
        for node in reversed(self.nodes[: stop + 1]):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            if node.out._retain:
                _accumulate(node.out, g)
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    _accumulate(inp, gi)
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.shape:
        raise ValueError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    t.grad = g.copy() if t.grad is None else t.grad + g


def active_tape() -> Tape | None:
    return _active_tape.get()


def backward(loss: Tensor, grad=None) -> None:
    """Backpropagate from ``loss`` on the tape that recorded it."""
    if loss._node is None:
        if loss.size != 1 and grad is None:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data) if grad is None else grad)
        return
    loss._node.tape.backward(loss, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
