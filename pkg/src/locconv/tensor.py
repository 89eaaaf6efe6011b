"""Dense float64 tensors and a tape for reverse-mode differentiation.

Operations record a :class:`Node` on the innermost active :class:`Tape`.
Outside a tape nothing is recorded and results carry no gradient, which is
what inference and finite-difference probing want.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64, copy=True, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._is_leaf = True

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=np.float64, order="C")
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._is_leaf = not requires_grad
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    ``nodes`` are appended in execution order, so they are topologically
    sorted by construction. ``parameters`` collects every leaf tensor with
    ``requires_grad`` that fed a recorded node, in first-use order.
    """

    nodes: list = field(default_factory=list)
    parameters: list = field(default_factory=list)
    _seen: set = field(default_factory=set, repr=False)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: Node) -> None:
        for t in node.inputs:
            if t.requires_grad and t._is_leaf and id(t) not in self._seen:
                self._seen.add(id(t))
                self.parameters.append(t)
        self.nodes.append(node)


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def make_result(op: str, inputs: Sequence[Tensor], data: np.ndarray,
                backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it if a tape is active."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, needs)
    if needs:
        tape.record(Node(op, tuple(inputs), out, backward))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` on every gradient-carrying tensor reachable from ``loss``.

    Leaf gradients accumulate into any existing ``.grad``; intermediate
    tensors receive fresh gradients. Registered parameters that the loss does
    not depend on get a zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"{node.op}: gradient shape {gi.shape} != operand shape {t.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = t
    for key, t in owners.items():
        g = grads[key]
        if t._is_leaf:
            t.grad = g.copy() if t.grad is None else t.grad + g
        else:
            t.grad = g
    for p in tape.parameters:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
