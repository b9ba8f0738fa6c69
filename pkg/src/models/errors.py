"""
Error types for the Beamsight workbench.
Each error carries the process exit code the command line reports for it.
"""


class BeamsightError(Exception):
    """Base class for all workbench errors."""
    exit_code: int = 1


class ConfigError(BeamsightError):
    """Invalid or inconsistent configuration."""
    exit_code = 2


class DataIntegrityError(BeamsightError):
    """Dataset or checkpoint files that fail validation."""
    exit_code = 3


class GenerationError(BeamsightError):
    """Scene or dataset generation that cannot be satisfied."""
    exit_code = 3


class NumericalError(BeamsightError):
    """NaN or Inf detected during a computation."""
    exit_code = 4


class DimensionError(BeamsightError, ValueError):
    """Operand shapes do not agree."""
    exit_code = 4


class ContractError(BeamsightError, RuntimeError):
    """A precondition of an operation was violated."""
    exit_code = 4
