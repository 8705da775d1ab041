"""Central finite-difference gradient oracle.

Used by the test suite to check analytic gradients against an
independent numerical estimate; kept in the library so downstream
models can be verified the same way.
"""

from __future__ import annotations

import numpy as np

from .core import DenseTensor, Parameter


def finite_diff_grad(f, at: Parameter | DenseTensor, step: float = 1e-5) -> DenseTensor:
    """Estimate d f() / d at by central differences, one element at a time.

    ``f`` is a zero-argument closure returning a scalar (float or scalar
    tensor) that re-evaluates the computation from the current parameter
    values; it must be deterministic given fixed rng state.  The
    parameter data is perturbed in place and restored exactly.
    """
    target = at.tensor if isinstance(at, Parameter) else at
    flat = target.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        f_plus = _scalar(f())
        flat[i] = original - step
        f_minus = _scalar(f())
        flat[i] = original
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return DenseTensor(grad.reshape(target.data.shape))


def _scalar(value) -> float:
    if isinstance(value, DenseTensor):
        return value.item()
    return float(value)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Elementwise |a - n| / max(|a|, |n|, floor), reduced to the maximum.

    The floor keeps the comparison meaningful where the true gradient is
    near zero and the finite-difference estimate is dominated by
    round-off noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
