"""Differentiable operations over :class:`DenseTensor`.

Each op validates shapes, computes the forward value with numpy, and,
when a tape is active and some operand requires grad, appends a node
whose closure implements the exact backward rule.  Binary elementwise
ops accept equal shapes or a 1-D vector broadcast across the trailing
axis of a 2-D operand (bias addition); richer broadcasting is rejected.
"""

from __future__ import annotations

import numpy as np

from ..errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    LabelError,
    NumericDomainError,
)
from .core import DenseTensor, active_tape, ensure_leaf


def _result(values) -> DenseTensor:
    out = DenseTensor(values)
    return out


def _maybe_record(out: DenseTensor, parents, backward_fn) -> DenseTensor:
    tape = active_tape()
    if tape is None:
        return out
    if not any(p.requires_grad for p in parents):
        return out
    if tape.consumed:
        raise ContractError("cannot record onto a consumed tape")
    parent_ids = tuple(ensure_leaf(tape, p) for p in parents)
    out.requires_grad = True
    out.tape = tape
    out.node = tape.append(parent_ids, backward_fn)
    return out


def _check_binary_shapes(a: DenseTensor, b: DenseTensor, op: str):
    """Allow equal shapes, or a 1-D vector over the trailing axis of a 2-D."""
    if a.shape == b.shape:
        return
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if a.data.ndim == 1 and b.data.ndim == 2 and b.shape[1] == a.shape[0]:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce an output gradient back to an operand's shape."""
    if g.shape == shape:
        return g
    # Vector broadcast over the trailing axis: sum out the leading axis.
    return g.sum(axis=0)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul requires rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    out = _result(a.data @ b.data)
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        return (g @ b_data.T, a_data.T @ g)

    return _maybe_record(out, (a, b), backward_fn)


def transpose(a: DenseTensor) -> DenseTensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose requires a rank-2 operand, got {a.shape}")
    out = _result(a.data.T)

    def backward_fn(g):
        return (g.T,)

    return _maybe_record(out, (a,), backward_fn)


def reshape(a: DenseTensor, shape) -> DenseTensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: {a.shape} has {a.size} elements, target {shape}")
    out = _result(a.data.reshape(shape))
    src_shape = a.shape

    def backward_fn(g):
        return (g.reshape(src_shape),)

    return _maybe_record(out, (a,), backward_fn)


def concat(tensors, axis: int = 0) -> DenseTensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty sequence")
    out = _result(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _maybe_record(out, tuple(tensors), backward_fn)


# ---------------------------------------------------------------------------
# elementwise


def add(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _check_binary_shapes(a, b, "add")
    out = _result(a.data + b.data)
    a_shape, b_shape = a.shape, b.shape

    def backward_fn(g):
        return (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape))

    return _maybe_record(out, (a, b), backward_fn)


def sub(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _check_binary_shapes(a, b, "sub")
    out = _result(a.data - b.data)
    a_shape, b_shape = a.shape, b.shape

    def backward_fn(g):
        return (_unbroadcast(g, a_shape), -_unbroadcast(g, b_shape))

    return _maybe_record(out, (a, b), backward_fn)


def mul(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _check_binary_shapes(a, b, "mul")
    out = _result(a.data * b.data)
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    def backward_fn(g):
        return (_unbroadcast(g * b_data, a_shape), _unbroadcast(g * a_data, b_shape))

    return _maybe_record(out, (a, b), backward_fn)


def scale(a: DenseTensor, factor: float) -> DenseTensor:
    factor = float(factor)
    out = _result(a.data * factor)

    def backward_fn(g):
        return (g * factor,)

    return _maybe_record(out, (a,), backward_fn)


def tanh(a: DenseTensor) -> DenseTensor:
    t = np.tanh(a.data)
    out = _result(t)

    def backward_fn(g):
        return (g * (1.0 - t * t),)

    return _maybe_record(out, (a,), backward_fn)


def exp(a: DenseTensor) -> DenseTensor:
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    if not np.all(np.isfinite(e)):
        raise NumericDomainError("exp overflow: operand too large")
    out = _result(e)

    def backward_fn(g):
        return (g * e,)

    return _maybe_record(out, (a,), backward_fn)


def log(a: DenseTensor) -> DenseTensor:
    if np.any(a.data <= 0.0):
        raise NumericDomainError("log requires strictly positive inputs")
    out = _result(np.log(a.data))
    a_data = a.data

    def backward_fn(g):
        return (g / a_data,)

    return _maybe_record(out, (a,), backward_fn)


def relu(a: DenseTensor) -> DenseTensor:
    mask = a.data > 0.0
    out = _result(np.where(mask, a.data, 0.0))

    def backward_fn(g):
        return (g * mask,)

    return _maybe_record(out, (a,), backward_fn)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a: DenseTensor, axis: int | None = None) -> DenseTensor:
    if axis is None:
        out = _result(np.array(a.data.sum()))
        src_shape = a.shape

        def backward_fn(g):
            return (np.broadcast_to(g, src_shape).copy(),)

    else:
        _check_axis(a, axis)
        out = _result(a.data.sum(axis=axis))
        src_shape = a.shape

        def backward_fn(g):
            return (np.repeat(np.expand_dims(g, axis), src_shape[axis], axis=axis),)

    return _maybe_record(out, (a,), backward_fn)


def reduce_mean(a: DenseTensor, axis: int | None = None) -> DenseTensor:
    n = a.size if axis is None else a.shape[_check_axis(a, axis)]
    total = reduce_sum(a, axis)
    return scale(total, 1.0 / n)


def reduce_max(a: DenseTensor, axis: int) -> DenseTensor:
    """Maximum over one axis; ties route the gradient to the first index."""
    axis = _check_axis(a, axis)
    argmax = np.argmax(a.data, axis=axis)
    out = _result(np.take_along_axis(a.data, np.expand_dims(argmax, axis), axis).squeeze(axis))
    src_shape = a.shape

    def backward_fn(g):
        full = np.zeros(src_shape)
        np.put_along_axis(full, np.expand_dims(argmax, axis), np.expand_dims(g, axis), axis)
        return (full,)

    return _maybe_record(out, (a,), backward_fn)


def _check_axis(a: DenseTensor, axis: int) -> int:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.data.ndim


# ---------------------------------------------------------------------------
# softmax / dropout / loss


def softmax(a: DenseTensor, axis: int) -> DenseTensor:
    """Max-shifted softmax along one axis; rows sum to 1 and never overflow."""
    axis = _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _result(s)

    def backward_fn(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _maybe_record(out, (a,), backward_fn)


def dropout(a: DenseTensor, p: float, mode: str, rng: np.random.Generator | None = None) -> DenseTensor:
    """Inverted dropout: train-mode survivors scale by 1/(1-p), eval is identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return a
    if rng is None:
        raise ContractError("train-mode dropout requires a seeded rng")
    keep = rng.random(a.shape) >= p
    factor = 1.0 / (1.0 - p)
    out = _result(a.data * keep * factor)

    def backward_fn(g):
        return (g * keep * factor,)

    return _maybe_record(out, (a,), backward_fn)


def cross_entropy_logits(logits: DenseTensor, targets) -> DenseTensor:
    """Mean negative log-softmax of the target class, computed via log-sum-exp."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy_logits expects [batch x classes], got {logits.shape}")
    n, c = logits.shape
    idx = np.asarray(targets, dtype=np.int64).reshape(-1)
    if idx.shape[0] != n:
        raise DimensionError(f"{idx.shape[0]} targets for {n} logit rows")
    for row, t in enumerate(idx):
        if not 0 <= t < c:
            raise LabelError(f"target {t} out of range [0, {c}) at row {row}")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    losses = lse - z[np.arange(n), idx]
    out = _result(np.array(losses.mean()))

    soft = np.exp(z - m)
    soft /= soft.sum(axis=1, keepdims=True)

    def backward_fn(g):
        grad = soft.copy()
        grad[np.arange(n), idx] -= 1.0
        grad *= float(g) / n
        return (grad,)

    return _maybe_record(out, (logits,), backward_fn)
