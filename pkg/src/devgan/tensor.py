"""Dense float64 tensors with a define-by-run tape for reverse-mode gradients.

Operations record onto the innermost active :class:`Tape`; with no tape
active they run as plain numpy and nothing is recorded.  Gradients are
requested per root and per parameter set via :func:`backward`, which prunes
the tape to the nodes that actually connect the root to those parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf from finite inputs."""


class ShapeError(ValueError):
    pass


# backward_fn(grad_out, needs) -> one gradient (or None) per input
BackwardFn = Callable[[np.ndarray, Sequence[bool]], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    backward_fn: BackwardFn
    index: int = -1
    tape: Optional["Tape"] = None


class Tape:
    """Append-only record of operations; use as a context manager."""

    _stack: list["Tape"] = []

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def record(self, node: Node) -> None:
        node.index = len(self.nodes)
        node.tape = self
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    @classmethod
    def active(cls) -> Optional["Tape"]:
        return cls._stack[-1] if cls._stack else None


class Tensor:
    __slots__ = ("data", "node")

    def __init__(self, data, node: Optional[Node] = None) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        kind = self.node.op if self.node else "const"
        return f"Tensor(shape={self.shape}, {kind})"


class ParamTensor(Tensor):
    """Trainable leaf tensor carrying its name and Adam state."""

    __slots__ = ("name", "moment1", "moment2", "step_count")

    def __init__(self, name: str, data) -> None:
        super().__init__(np.array(data, dtype=np.float64))
        self.name = name
        self.moment1 = np.zeros_like(self.data)
        self.moment2 = np.zeros_like(self.data)
        self.step_count = 0

    @property
    def tracked(self) -> bool:
        return True

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={self.shape})"


def is_tracked(t: Tensor) -> bool:
    return isinstance(t, ParamTensor) or t.node is not None


def check_finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    return arr


def make_result(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap a forward result, recording a tape node when any input is tracked."""
    check_finite(op, out)
    tape = Tape.active()
    if tape is None or not any(is_tracked(t) for t in inputs):
        return Tensor(out)
    node = Node(op, tuple(inputs), backward_fn)
    tape.record(node)
    return Tensor(out, node)


def backward(root: Tensor, params: Iterable[ParamTensor]) -> dict[str, np.ndarray]:
    """Gradients of scalar ``root`` with respect to exactly ``params``.

    Returns a map from parameter name to gradient array.  Parameters that the
    root does not depend on get zeros; tensors outside ``params`` get nothing,
    and no work is spent on graph regions that lead only to them.
    """
    if root.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    params = list(params)
    grads = {p.name: np.zeros_like(p.data) for p in params}
    if root.node is None:
        return grads
    wanted = {id(p): p for p in params}
    tape = root.node.tape
    last = root.node.index
    nodes = tape.nodes[: last + 1]

    # forward sweep: which nodes lie on a path from a wanted parameter
    relevant = bytearray(last + 1)

    def needs_grad(t: Tensor) -> bool:
        if isinstance(t, ParamTensor):
            return id(t) in wanted
        return t.node is not None and t.node.tape is tape and relevant[t.node.index]

    for node in nodes:
        if any(needs_grad(t) for t in node.inputs):
            relevant[node.index] = 1
    if not relevant[last]:
        return grads

    pending: dict[int, np.ndarray] = {last: np.ones_like(root.data)}
    for node in reversed(nodes):
        g = pending.pop(node.index, None)
        if g is None:
            continue
        needs = [needs_grad(t) for t in node.inputs]
        in_grads = node.backward_fn(g, needs)
        for t, need, gi in zip(node.inputs, needs, in_grads):
            if not need or gi is None:
                continue
            if isinstance(t, ParamTensor):
                grads[t.name] += gi
            else:
                idx = t.node.index
                if idx in pending:
                    pending[idx] = pending[idx] + gi
                else:
                    pending[idx] = gi
    return grads
