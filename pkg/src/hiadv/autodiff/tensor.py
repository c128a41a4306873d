"""Tensor and tape for reverse-mode differentiation.

A :class:`Tensor` wraps a float64 numpy array. Whenever an op runs with at
least one input that requires a gradient, the op appends a :class:`Node` to
the active :class:`Tape`. :func:`backward` replays the tape in reverse.

Tapes are explicit (``with Tape(): ...``) or implicit: ops recorded outside
any ``with`` block land on a module-level default tape that is replaced
after it has been consumed by a backward pass.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class AutodiffError(RuntimeError):
    pass


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        shown = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class DomainError(ValueError):
    pass


class TapeError(AutodiffError):
    pass


class Node:
    __slots__ = ("tape", "index", "inputs", "backward_fn", "op")

    def __init__(self, tape: "Tape", index: int, inputs: tuple["Tensor", ...],
                 backward_fn: BackwardFn, op: str):
        self.tape = tape
        self.index = index
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.spent = False

    def __enter__(self) -> "Tape":
        _state().stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _state().stack
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes = []
        self.spent = False

    def _record(self, inputs: tuple["Tensor", ...], fn: BackwardFn, op: str) -> Node:
        if self.spent:
            raise TapeError("tape was already consumed by backward(); call reset() first")
        node = Node(self, len(self.nodes), inputs, fn, op)
        self.nodes.append(node)
        return node


class _ThreadState(threading.local):
    def __init__(self) -> None:
        self.stack: list[Tape] = []
        self.default = Tape()
        self.grad_enabled = True


_local = _ThreadState()


def _state() -> _ThreadState:
    return _local


def active_tape() -> Tape:
    st = _state()
    if st.stack:
        return st.stack[-1]
    if st.default.spent:
        st.default = Tape()
    return st.default


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them on any tape."""
    st = _state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


def is_grad_enabled() -> bool:
    return _state().grad_enabled


class Tensor:
    """Dense float64 array taking part in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; the functional forms live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _lift(other, self))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_lift(other, self), self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, float(x)))


def make_result(data: np.ndarray, inputs: tuple[Tensor, ...], fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op's output, recording it when any input needs a gradient."""
    out = Tensor(data)
    if _state().grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = active_tape()._record(inputs, fn, op)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise AutodiffError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
            return
        raise AutodiffError("loss does not require grad; nothing was recorded")
    tape = loss.node.tape
    if tape.spent:
        raise TapeError("backward() called twice on the same tape without reset()")

    pending: dict[int, np.ndarray] = {loss.node.index: np.ones_like(loss.data)}
    nodes = tape.nodes
    for idx in range(loss.node.index, -1, -1):
        g = pending.pop(idx, None)
        if g is None:
            continue
        node = nodes[idx]
        in_grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            src = inp.node
            if src is not None and src.tape is tape:
                prev = pending.get(src.index)
                pending[src.index] = gi if prev is None else prev + gi
            else:
                _accumulate(inp, gi)
    tape.spent = True
    tape.nodes = []


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        raise AutodiffError(f"gradient shape {g.shape} does not match tensor {t.shape}")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g
