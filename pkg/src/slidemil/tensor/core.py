"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is define-by-run: a :class:`Tape` records one forward pass as
an append-only list of nodes, so parents always precede children and a
single reverse sweep propagates gradients visiting each node once.  The
tape is consumed by :func:`backward` and a fresh one is recorded per
forward pass.  Everything is 64-bit and single-threaded by contract.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import ContractError, DimensionError

MAX_RANK = 4


def validate_shape(dims) -> tuple:
    """Check the shape contract: rank at most 4, every extent positive."""
    dims = tuple(int(d) for d in dims)
    if len(dims) > MAX_RANK:
        raise DimensionError(f"rank {len(dims)} exceeds supported maximum {MAX_RANK}")
    for d in dims:
        if d < 1:
            raise DimensionError(f"shape {dims} has a non-positive extent")
    return dims


class TapeNode:
    __slots__ = ("parents", "backward_fn", "sink")

    def __init__(self, parents, backward_fn, sink=None):
        self.parents = parents        # indices of parent nodes on the same tape
        self.backward_fn = backward_fn  # maps output grad -> tuple of parent grads
        self.sink = sink              # leaf only: tensor that accumulates the grad


class Tape:
    """Append-only record of one differentiable forward pass."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.consumed = False

    def append(self, parents, backward_fn, sink=None) -> int:
        self.nodes.append(TapeNode(parents, backward_fn, sink))
        return len(self.nodes) - 1


_active_tape: Tape | None = None


def active_tape() -> Tape | None:
    return _active_tape


@contextmanager
def record():
    """Record all tensor operations in the body onto a fresh tape."""
    global _active_tape
    previous = _active_tape
    tape = Tape()
    _active_tape = tape
    try:
        yield tape
    finally:
        _active_tape = previous


class DenseTensor:
    """N-dimensional float64 array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "node", "tape")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        validate_shape(arr.shape)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: int | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "DenseTensor":
        return DenseTensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DenseTensor(shape={self.shape}{flag})"

    # Convenience operators; the full op set lives in ops.py.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


class Parameter:
    """A trainable tensor with a persistent gradient accumulator.

    ``stable_id`` addresses the parameter in optimizer state and
    checkpoints and must be unique within a model.
    """

    __slots__ = ("tensor", "stable_id", "frozen")

    def __init__(self, values, stable_id: str):
        self.tensor = DenseTensor(values, requires_grad=True)
        self.tensor.grad = np.zeros_like(self.tensor.data)
        self.stable_id = stable_id
        self.frozen = False

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, values: np.ndarray):
        if values.shape != self.tensor.data.shape:
            raise DimensionError(
                f"parameter {self.stable_id}: cannot assign shape {values.shape} "
                f"over {self.tensor.data.shape}"
            )
        self.tensor.data = np.asarray(values, dtype=np.float64)

    @property
    def grad(self) -> np.ndarray:
        return self.tensor.grad

    @property
    def shape(self) -> tuple:
        return self.tensor.data.shape

    def zero_grad(self):
        self.tensor.grad = np.zeros_like(self.tensor.data)

    def __repr__(self):
        return f"Parameter({self.stable_id!r}, shape={self.shape})"


def ensure_leaf(tape: Tape, t: DenseTensor) -> int:
    """Give ``t`` a leaf node on ``tape``, creating one on first use."""
    if t.tape is tape and t.node is not None:
        return t.node
    t.tape = tape
    t.node = tape.append((), None, sink=t)
    return t.node


def backward(root: DenseTensor) -> None:
    """Reverse sweep from a scalar root, accumulating into leaf gradients.

    Gradients are added (+=) into every reachable tensor that has
    ``requires_grad`` set, so successive backward calls over separate
    tapes sum their contributions.  The tape is consumed afterwards.
    """
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    tape = root.tape
    if tape is None or root.node is None:
        raise ContractError("backward root is not recorded on any tape")
    if tape.consumed:
        raise ContractError("tape already consumed by a previous backward pass")

    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[root.node] = np.ones_like(root.data)

    for idx in range(root.node, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        node = tape.nodes[idx]
        if node.backward_fn is None:
            sink = node.sink
            if sink is not None and sink.requires_grad:
                if sink.grad is None:
                    sink.grad = g.copy()
                else:
                    sink.grad += g
            continue
        parent_grads = node.backward_fn(g)
        for pidx, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if grads[pidx] is None:
                grads[pidx] = pg
            else:
                grads[pidx] = grads[pidx] + pg
        grads[idx] = None

    tape.consumed = True
