"""Exception hierarchy.

``ValidationError`` subclasses indicate bad inputs or contract violations
(CLI exit code 1); everything else under ``SlideMilError`` is a runtime
failure (exit code 2).
"""


class SlideMilError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SlideMilError):
    """Invalid input, configuration, or contract violation."""


class DimensionError(ValidationError):
    """Tensor shapes incompatible with the requested operation."""


class NumericDomainError(ValidationError):
    """Input outside the mathematical domain of an operation."""


class ConfigurationError(ValidationError):
    """Configuration value outside its allowed range."""


class LabelError(ValidationError):
    """Class label outside the valid range for a task."""


class ContractError(ValidationError):
    """Operation precondition violated by the caller."""


class RegistryError(ValidationError):
    """Reference to a task that is not registered."""


class CheckpointError(ValidationError):
    """Checkpoint file malformed or incompatible with the target model."""


class DataError(ValidationError):
    """Manifest, feature file, or split inconsistency."""


class MetricUndefinedError(ValidationError):
    """Metric has no defined value for the given inputs."""


class ExportError(ValidationError):
    """Attention export requested with insufficient data."""


class TrainingDivergenceError(SlideMilError):
    """Training produced a non-finite loss."""

    def __init__(self, task_id: str, step: int, value: float):
        self.task_id = task_id
        self.step = step
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} for task {task_id!r} at step {step}"
        )
