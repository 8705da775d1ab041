from .core import (
    DenseTensor,
    Parameter,
    Tape,
    active_tape,
    backward,
    record,
    validate_shape,
)
from .gradcheck import finite_diff_grad, max_relative_error
from . import ops

__all__ = [
    "DenseTensor",
    "Parameter",
    "Tape",
    "active_tape",
    "backward",
    "record",
    "validate_shape",
    "finite_diff_grad",
    "max_relative_error",
    "ops",
]
