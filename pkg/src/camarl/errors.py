"""Shared exception types.

The split mirrors how failures should be handled: dimension/contract
errors are caller bugs, state errors are misuse of a stateful object,
divergence errors abort a training run with diagnostics attached.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class StateError(RuntimeError):
    """Operation invalid in the object's current state (e.g. repeated backward)."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values; carries diagnostics in args."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class SchemaError(ValueError):
    """A data file is missing required columns or is otherwise malformed."""
